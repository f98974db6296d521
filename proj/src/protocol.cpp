// SPDX-License-Identifier: Apache-2.0
#include "pw/protocol.hpp"

#include <charconv>
#include <sstream>

namespace pw::proto {

using wire::Reader;
using wire::Writer;

namespace {

void put_strings(Writer& w, const std::vector<std::string>& v) {
    if (v.size() > 0xFFFF) throw Error(ErrorCode::overflow, "too many names");
    w.u16(static_cast<std::uint16_t>(v.size()));
    for (const auto& s : v) w.str16(s);
}

std::vector<std::string> get_strings(Reader& r) {
    std::vector<std::string> out;
    auto n = r.u16();
    for (std::uint16_t i = 0; i < n; ++i) out.push_back(r.str16());
    return out;
}

void put_paths(Writer& w, const std::vector<PropertyPath>& v) {
    if (v.size() > 0xFFFF) throw Error(ErrorCode::overflow, "too many paths");
    w.u16(static_cast<std::uint16_t>(v.size()));
    for (const auto& p : v) w.str16(p.to_string());
}

PropertyPath get_path(Reader& r) {
    auto at = r.offset();
    auto text = r.str16();
    auto p = PropertyPath::try_parse(text);
    if (!p) r.fail_at(at, "malformed property path");
    return *p;
}

std::vector<PropertyPath> get_paths(Reader& r) {
    std::vector<PropertyPath> out;
    auto n = r.u16();
    for (std::uint16_t i = 0; i < n; ++i) out.push_back(get_path(r));
    return out;
}

void put_typed(Writer& w, wire::TypeWriter& types, const DescriptorPtr& d, const Value& v) {
    types.write(w, d);
    wire::encode_value(w, v, *d);
}

std::pair<DescriptorPtr, Value> get_typed(Reader& r, const wire::InboundTypes& types) {
    auto d = wire::read_type(r, types);
    auto v = wire::decode_value(r, *d);
    return {std::move(d), std::move(v)};
}

template <class F>
Bytes build(F&& body) {
    Bytes out;
    Writer w(out);
    body(w);
    return out;
}

template <class T, class F>
T parse(ByteView p, std::string_view what, F&& body) {
    Reader r(p);
    T m = body(r);
    r.expect_end(what);
    return m;
}

} // namespace

Bytes encode(const Hello& m) {
    return build([&](Writer& w) {
        w.u8(m.version);
        w.str16(m.peer);
    });
}

Hello decode_hello(ByteView p) {
    return parse<Hello>(p, "HELLO", [](Reader& r) {
        Hello m;
        m.version = r.u8();
        m.peer = r.str16();
        return m;
    });
}

Bytes encode(const OpenRequest& m) {
    return build([&](Writer& w) {
        w.u32(m.req);
        w.str16(m.pv);
    });
}

OpenRequest decode_open_request(ByteView p) {
    return parse<OpenRequest>(p, "CHANNEL_OPEN", [](Reader& r) {
        OpenRequest m;
        m.req = r.u32();
        m.pv = r.str16();
        return m;
    });
}

Bytes encode(const OpenReply& m, wire::TypeWriter& types) {
    return build([&](Writer& w) {
        w.u32(m.req);
        w.u32(m.channel);
        types.write(w, m.schema);
        put_strings(w, m.event_kinds);
    });
}

OpenReply decode_open_reply(ByteView p, const wire::InboundTypes& types) {
    return parse<OpenReply>(p, "CHANNEL_OPEN reply", [&](Reader& r) {
        OpenReply m;
        m.req = r.u32();
        m.channel = r.u32();
        m.schema = wire::read_type(r, types);
        m.event_kinds = get_strings(r);
        return m;
    });
}

Bytes encode(const GetRequest& m) {
    return build([&](Writer& w) {
        w.u32(m.req);
        w.u32(m.channel);
        put_paths(w, m.paths);
    });
}

GetRequest decode_get_request(ByteView p) {
    return parse<GetRequest>(p, "GET", [](Reader& r) {
        GetRequest m;
        m.req = r.u32();
        m.channel = r.u32();
        m.paths = get_paths(r);
        return m;
    });
}

Bytes encode(const GetReply& m, wire::TypeWriter& types) {
    return build([&](Writer& w) {
        w.u32(m.req);
        w.u64(m.seq);
        put_typed(w, types, m.type, m.value);
    });
}

GetReply decode_get_reply(ByteView p, const wire::InboundTypes& types) {
    return parse<GetReply>(p, "GET reply", [&](Reader& r) {
        GetReply m;
        m.req = r.u32();
        m.seq = r.u64();
        std::tie(m.type, m.value) = get_typed(r, types);
        return m;
    });
}

Bytes encode(const PutRequest& m, wire::TypeWriter& types) {
    return build([&](Writer& w) {
        w.u32(m.req);
        w.u8(m.flags);
        w.u16(static_cast<std::uint16_t>(m.parts.size()));
        for (const auto& part : m.parts) {
            w.u32(part.channel);
            put_typed(w, types, part.type, part.value);
        }
    });
}

PutRequest decode_put_request(ByteView p, const wire::InboundTypes& types) {
    return parse<PutRequest>(p, "PUT", [&](Reader& r) {
        PutRequest m;
        m.req = r.u32();
        m.flags = r.u8();
        auto n = r.u16();
        for (std::uint16_t i = 0; i < n; ++i) {
            PutPart part;
            part.channel = r.u32();
            std::tie(part.type, part.value) = get_typed(r, types);
            m.parts.push_back(std::move(part));
        }
        return m;
    });
}

Bytes encode(const PutReply& m) {
    return build([&](Writer& w) {
        w.u32(m.req);
        w.u16(static_cast<std::uint16_t>(m.results.size()));
        for (const auto& res : m.results) {
            w.u64(res.seq);
            put_strings(w, res.fired);
        }
    });
}

PutReply decode_put_reply(ByteView p) {
    return parse<PutReply>(p, "PUT reply", [](Reader& r) {
        PutReply m;
        m.req = r.u32();
        auto n = r.u16();
        for (std::uint16_t i = 0; i < n; ++i) {
            CommitResult res;
            res.seq = r.u64();
            res.committed = res.seq != 0;
            res.fired = get_strings(r);
            m.results.push_back(std::move(res));
        }
        return m;
    });
}

Bytes encode(const MonitorRequest& m) {
    return build([&](Writer& w) {
        w.u32(m.req);
        w.u32(m.channel);
        w.u32(m.sub);
        w.u8(m.flags);
        put_strings(w, m.kinds);
        put_paths(w, m.paths);
    });
}

MonitorRequest decode_monitor_request(ByteView p) {
    return parse<MonitorRequest>(p, "MONITOR_SUB", [](Reader& r) {
        MonitorRequest m;
        m.req = r.u32();
        m.channel = r.u32();
        m.sub = r.u32();
        m.flags = r.u8();
        m.kinds = get_strings(r);
        m.paths = get_paths(r);
        return m;
    });
}

Bytes encode(const Ack& m) {
    return build([&](Writer& w) { w.u32(m.req); });
}

Ack decode_ack(ByteView p) {
    return parse<Ack>(p, "acknowledgement", [](Reader& r) { return Ack{r.u32()}; });
}

Bytes encode(const MonitorEvent& m, wire::TypeWriter& types) {
    return build([&](Writer& w) {
        w.u32(m.sub);
        w.u64(m.seq);
        w.u64(static_cast<std::uint64_t>(m.time_stamp));
        w.u8(m.initial ? 1 : 0);
        put_strings(w, m.fired);
        put_typed(w, types, m.type, m.value);
    });
}

MonitorEvent decode_monitor_event(ByteView p, const wire::InboundTypes& types) {
    return parse<MonitorEvent>(p, "MONITOR_EVT", [&](Reader& r) {
        MonitorEvent m;
        m.sub = r.u32();
        m.seq = r.u64();
        m.time_stamp = static_cast<std::int64_t>(r.u64());
        m.initial = r.u8() != 0;
        m.fired = get_strings(r);
        std::tie(m.type, m.value) = get_typed(r, types);
        return m;
    });
}

Bytes encode(const SnapshotRequest& m) {
    return build([&](Writer& w) {
        w.u32(m.req);
        w.u32(m.sub);
        w.u8(m.flags);
        w.str16(m.spec.trigger_pv);
        w.str16(m.spec.trigger_event);
        w.u16(static_cast<std::uint16_t>(m.spec.members.size()));
        for (const auto& mem : m.spec.members) {
            w.str16(mem.pv);
            w.str16(mem.path.to_string());
        }
    });
}

SnapshotRequest decode_snapshot_request(ByteView p) {
    return parse<SnapshotRequest>(p, "SNAP_SUB", [](Reader& r) {
        SnapshotRequest m;
        m.req = r.u32();
        m.sub = r.u32();
        m.flags = r.u8();
        m.spec.trigger_pv = r.str16();
        m.spec.trigger_event = r.str16();
        auto n = r.u16();
        for (std::uint16_t i = 0; i < n; ++i) {
            SnapshotMember mem;
            mem.pv = r.str16();
            mem.path = get_path(r);
            m.spec.members.push_back(std::move(mem));
        }
        return m;
    });
}

Bytes encode(const SnapshotEvent& m, wire::TypeWriter& types) {
    return build([&](Writer& w) {
        w.u32(m.sub);
        w.u64(m.seq_tag);
        w.u8(m.initial ? 1 : 0);
        put_typed(w, types, m.type, m.value);
    });
}

SnapshotEvent decode_snapshot_event(ByteView p, const wire::InboundTypes& types) {
    return parse<SnapshotEvent>(p, "SNAP_EVT", [&](Reader& r) {
        SnapshotEvent m;
        m.sub = r.u32();
        m.seq_tag = r.u64();
        m.initial = r.u8() != 0;
        std::tie(m.type, m.value) = get_typed(r, types);
        return m;
    });
}

Bytes encode(const EventRegRequest& m) {
    return build([&](Writer& w) {
        w.u32(m.req);
        w.u32(m.channel);
        w.str16(m.name);
        w.u8(static_cast<std::uint8_t>(m.predicate.kind));
        w.str16(m.predicate.path.to_string());
        w.f64(m.predicate.threshold);
    });
}

EventRegRequest decode_event_reg(ByteView p) {
    return parse<EventRegRequest>(p, "EVENT_REG", [](Reader& r) {
        EventRegRequest m;
        m.req = r.u32();
        m.channel = r.u32();
        m.name = r.str16();
        auto at = r.offset();
        auto kind = r.u8();
        if (kind > 3) r.fail_at(at, "unknown predicate kind");
        m.predicate.kind = static_cast<PredicateSpec::Kind>(kind);
        auto path = r.str16();
        if (!path.empty()) {
            auto parsed = PropertyPath::try_parse(path);
            if (!parsed) r.fail_at(at + 1, "malformed property path");
            m.predicate.path = *parsed;
        }
        m.predicate.threshold = r.f64();
        return m;
    });
}

Bytes encode(const ErrorReply& m) {
    return build([&](Writer& w) {
        w.u32(m.req);
        w.u16(static_cast<std::uint16_t>(m.code));
        w.str16(m.message.size() > 0xFFFF ? m.message.substr(0, 0xFFFF) : m.message);
    });
}

ErrorReply decode_error(ByteView p) {
    return parse<ErrorReply>(p, "ERROR", [](Reader& r) {
        ErrorReply m;
        m.req = r.u32();
        m.code = static_cast<ErrorCode>(r.u16());
        m.message = r.str16();
        return m;
    });
}

std::uint32_t peek_req(ByteView p) {
    Reader r(p);
    return r.u32();
}

// ---------------------------------------------------------------------------
// Predicates

EventPredicate PredicateSpec::compile() const {
    auto p = path;
    auto x = threshold;
    switch (kind) {
    case Kind::always: return [](const Value&, const Value&) { return true; };
    case Kind::field_changed:
        return [p](const Value& a, const Value& b) {
            auto* va = a.find(p);
            auto* vb = b.find(p);
            return va && vb && !(*va == *vb);
        };
    case Kind::below:
    case Kind::above: {
        bool below = kind == Kind::below;
        return [p, x, below](const Value& a, const Value& b) {
            auto* va = a.find(p);
            auto* vb = b.find(p);
            if (!va || !vb) return false;
            auto fa = va->to_f64(), fb = vb->to_f64();
            if (!fa || !fb) return false;
            return below ? (*fa >= x && *fb < x) : (*fa <= x && *fb > x);
        };
    }
    }
    return {};
}

std::string PredicateSpec::to_string() const {
    switch (kind) {
    case Kind::always: return "always";
    case Kind::field_changed: return "field_changed " + path.to_string();
    case Kind::below:
    case Kind::above: {
        std::ostringstream os;
        os << (kind == Kind::below ? "below " : "above ") << path.to_string() << ' ' << threshold;
        return os.str();
    }
    }
    return "";
}

PredicateSpec PredicateSpec::parse(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string word, path, number, extra;
    in >> word >> path >> number >> extra;
    PredicateSpec s;
    auto bad = [&] { return Error(ErrorCode::parse, "malformed predicate '" + std::string(text) + "'"); };
    if (!extra.empty()) throw bad();
    if (word == "always") {
        if (!path.empty()) throw bad();
        return s;
    }
    if (word == "field_changed") {
        if (path.empty() || !number.empty()) throw bad();
        s.kind = Kind::field_changed;
        s.path = PropertyPath::parse(path);
        return s;
    }
    if (word == "below" || word == "above") {
        if (path.empty() || number.empty()) throw bad();
        s.kind = word == "below" ? Kind::below : Kind::above;
        s.path = PropertyPath::parse(path);
        auto [ptr, ec] = std::from_chars(number.data(), number.data() + number.size(), s.threshold);
        if (ec != std::errc{} || ptr != number.data() + number.size()) throw bad();
        return s;
    }
    throw bad();
}

} // namespace pw::proto
