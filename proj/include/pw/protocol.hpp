// SPDX-License-Identifier: Apache-2.0
#pragma once

// Payload layouts of the node protocol messages. Requests carry a u32
// request id echoed by the response (flag `response`); ERROR frames answer
// any request. Every `type` field is a type reference (see TypeWriter).

#include <cstdint>
#include <string>
#include <vector>

#include "pw/pv.hpp"
#include "pw/wire.hpp"

namespace pw::proto {

using wire::Bytes;
using wire::ByteView;

/// HELLO both ways: u8 version, str16 peer name.
struct Hello {
    std::uint8_t version = wire::version;
    std::string peer;
};

/// CHANNEL_OPEN request: u32 req, str16 pv.
struct OpenRequest {
    std::uint32_t req = 0;
    std::string pv;
};
/// CHANNEL_OPEN response: u32 req, u32 channel, type, u16 n + str16 kinds.
struct OpenReply {
    std::uint32_t req = 0;
    std::uint32_t channel = 0;
    DescriptorPtr schema;
    std::vector<std::string> event_kinds;
};

/// GET request: u32 req, u32 channel, u16 n + str16 paths (none = all).
struct GetRequest {
    std::uint32_t req = 0;
    std::uint32_t channel = 0;
    std::vector<PropertyPath> paths;
};
/// GET response: u32 req, u64 seq, type, value.
struct GetReply {
    std::uint32_t req = 0;
    std::uint64_t seq = 0;
    DescriptorPtr type;
    Value value;
};

/// One PV's share of a composite: u32 channel, type, value.
struct PutPart {
    std::uint32_t channel = 0;
    DescriptorPtr type;
    Value value;
};
/// PUT and PUT_COMPOSITE requests: u32 req, u8 flags, u16 n + parts. PUT
/// carries exactly one part.
struct PutRequest {
    static constexpr std::uint8_t coerce = 0x01;
    std::uint32_t req = 0;
    std::uint8_t flags = 0;
    std::vector<PutPart> parts;
};
/// PUT and PUT_COMPOSITE response: u32 req, u16 n + (u64 seq, u16 n + str16 fired).
struct PutReply {
    std::uint32_t req = 0;
    std::vector<CommitResult> results;
};

/// MONITOR_SUB request: u32 req, u32 channel, u32 sub, u8 flags,
/// u16 n + str16 kinds, u16 n + str16 paths.
struct MonitorRequest {
    static constexpr std::uint8_t cancel = 0x01;
    static constexpr std::uint8_t no_initial = 0x02;
    std::uint32_t req = 0;
    std::uint32_t channel = 0;
    std::uint32_t sub = 0;
    std::uint8_t flags = 0;
    std::vector<std::string> kinds;
    std::vector<PropertyPath> paths;
};
/// MONITOR_SUB and SNAP_SUB acknowledgement: u32 req.
struct Ack {
    std::uint32_t req = 0;
};
/// MONITOR_EVT: u32 sub, u64 seq, u64 timestamp, u8 initial, u16 n + str16
/// fired, type, value.
struct MonitorEvent {
    std::uint32_t sub = 0;
    std::uint64_t seq = 0;
    std::int64_t time_stamp = 0;
    bool initial = false;
    std::vector<std::string> fired;
    DescriptorPtr type;
    Value value;
};

/// SNAP_SUB request: u32 req, u32 sub, u8 flags, str16 trigger pv,
/// str16 trigger event, u16 n + (str16 pv, str16 path).
struct SnapshotRequest {
    static constexpr std::uint8_t cancel = 0x01;
    /// Deliver the current member state right away, as an initial event.
    static constexpr std::uint8_t with_initial = 0x02;
    std::uint32_t req = 0;
    std::uint32_t sub = 0;
    std::uint8_t flags = 0;
    SnapshotSpec spec;
};
/// SNAP_EVT: u32 sub, u64 seq_tag, u8 initial, type, value.
struct SnapshotEvent {
    std::uint32_t sub = 0;
    std::uint64_t seq_tag = 0;
    bool initial = false;
    DescriptorPtr type;
    Value value;
};

/// Declarative trigger carried by EVENT_REG; predicates cannot travel as code.
struct PredicateSpec {
    enum class Kind : std::uint8_t { always = 0, field_changed = 1, below = 2, above = 3 };
    Kind kind = Kind::always;
    PropertyPath path;
    double threshold = 0;

    /// Builds the predicate. `below`/`above` fire when the numeric field
    /// crosses the threshold; `field_changed` when the field differs.
    EventPredicate compile() const;
    std::string to_string() const;
    /// Parses `always`, `field_changed <path>`, `below <path> <x>`, `above <path> <x>`.
    static PredicateSpec parse(std::string_view text);
};

/// EVENT_REG request: u32 req, u32 channel (0 = node scope), str16 name,
/// u8 kind, str16 path, f64 threshold. Response: Ack.
struct EventRegRequest {
    std::uint32_t req = 0;
    std::uint32_t channel = 0;
    std::string name;
    PredicateSpec predicate;
};

/// ERROR: u32 req (0 = session level), u16 code, str16 message.
struct ErrorReply {
    std::uint32_t req = 0;
    ErrorCode code = ErrorCode::protocol;
    std::string message;
};

Bytes encode(const Hello& m);
Bytes encode(const OpenRequest& m);
Bytes encode(const OpenReply& m, wire::TypeWriter& types);
Bytes encode(const GetRequest& m);
Bytes encode(const GetReply& m, wire::TypeWriter& types);
Bytes encode(const PutRequest& m, wire::TypeWriter& types);
Bytes encode(const PutReply& m);
Bytes encode(const MonitorRequest& m);
Bytes encode(const Ack& m);
Bytes encode(const MonitorEvent& m, wire::TypeWriter& types);
Bytes encode(const SnapshotRequest& m);
Bytes encode(const SnapshotEvent& m, wire::TypeWriter& types);
Bytes encode(const EventRegRequest& m);
Bytes encode(const ErrorReply& m);

Hello decode_hello(ByteView p);
OpenRequest decode_open_request(ByteView p);
OpenReply decode_open_reply(ByteView p, const wire::InboundTypes& types);
GetRequest decode_get_request(ByteView p);
GetReply decode_get_reply(ByteView p, const wire::InboundTypes& types);
PutRequest decode_put_request(ByteView p, const wire::InboundTypes& types);
PutReply decode_put_reply(ByteView p);
MonitorRequest decode_monitor_request(ByteView p);
Ack decode_ack(ByteView p);
MonitorEvent decode_monitor_event(ByteView p, const wire::InboundTypes& types);
SnapshotRequest decode_snapshot_request(ByteView p);
SnapshotEvent decode_snapshot_event(ByteView p, const wire::InboundTypes& types);
EventRegRequest decode_event_reg(ByteView p);
ErrorReply decode_error(ByteView p);

/// Request id of any request or response payload that starts with one.
std::uint32_t peek_req(ByteView p);

} // namespace pw::proto
