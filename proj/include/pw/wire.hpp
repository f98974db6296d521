// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pw/types.hpp"

namespace pw::wire {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline constexpr std::uint8_t magic = 0xE7;
inline constexpr std::uint8_t version = 0x01;
inline constexpr std::size_t header_size = 8;
inline constexpr std::size_t max_payload = std::size_t{1} << 24;
inline constexpr std::size_t default_batch_threshold = 16384;

enum class Command : std::uint8_t {
    hello = 0x01,
    type_reg = 0x02,
    channel_open = 0x03,
    get = 0x04,
    put = 0x05,
    monitor_sub = 0x06,
    monitor_evt = 0x07,
    put_composite = 0x08,
    snap_sub = 0x09,
    snap_evt = 0x0A,
    error = 0x0B,
    echo = 0x0C,
    event_reg = 0x0D,
};

std::string_view command_name(Command c) noexcept;
bool is_known_command(std::uint8_t raw) noexcept;
/// Commands whose sender waits for the peer; appending one flushes a batch.
bool requires_round_trip(Command c) noexcept;

namespace flags {
inline constexpr std::uint8_t response = 0x01;
}

struct Frame {
    Command command = Command::echo;
    std::uint8_t flags = 0;
    Bytes payload;

    bool is_response() const noexcept { return flags & flags::response; }
    friend bool operator==(const Frame&, const Frame&) = default;
};

// ---------------------------------------------------------------------------
// Primitive readers and writers

class Writer {
public:
    explicit Writer(Bytes& out) : out_(out) {}

    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) { put_le(v); }
    void u32(std::uint32_t v) { put_le(v); }
    void u64(std::uint64_t v) { put_le(v); }
    void f64(double v);
    /// u16 length + UTF-8.
    void str16(std::string_view s);
    /// u32 length + UTF-8.
    void str32(std::string_view s);
    void raw(ByteView b) { out_.insert(out_.end(), b.begin(), b.end()); }

    Bytes& bytes() noexcept { return out_; }

    template <class T>
    void put_le(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

private:
    Bytes& out_;
};

/// Bounds-checked cursor. Every failure throws DecodeError with the absolute
/// offset (base + position) of the offending byte.
class Reader {
public:
    explicit Reader(ByteView data, std::size_t base = 0) : data_(data), base_(base) {}

    std::uint8_t u8();
    std::uint16_t u16() { return get_le<std::uint16_t>(); }
    std::uint32_t u32() { return get_le<std::uint32_t>(); }
    std::uint64_t u64() { return get_le<std::uint64_t>(); }
    double f64();
    std::string str16();
    std::string str32();
    ByteView raw(std::size_t n);

    std::size_t offset() const noexcept { return base_ + pos_; }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }
    bool done() const noexcept { return pos_ == data_.size(); }
    /// Throws unless every byte was consumed.
    void expect_end(std::string_view what) const;
    [[noreturn]] void fail(const std::string& message) const;
    [[noreturn]] void fail_at(std::size_t offset, const std::string& message) const;

    template <class T>
    T get_le() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(T(data_[pos_ + i]) << (8 * i));
        pos_ += sizeof(T);
        return v;
    }

private:
    void need(std::size_t n) const;

    ByteView data_;
    std::size_t base_;
    std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Codecs

void encode_descriptor(Writer& w, const TypeDescriptor& d);
Bytes encode_descriptor(const TypeDescriptor& d);
/// Decodes and validates one descriptor. The result is interned.
DescriptorPtr decode_descriptor(Reader& r);
/// As above, requiring the input to hold exactly one descriptor.
DescriptorPtr decode_descriptor(ByteView bytes);

/// v must conform to d (checked).
void encode_value(Writer& w, const Value& v, const TypeDescriptor& d);
Bytes encode_value(const Value& v, const TypeDescriptor& d);
/// The result always conforms to d.
Value decode_value(Reader& r, const TypeDescriptor& d);
Value decode_value(ByteView bytes, const TypeDescriptor& d);

// ---------------------------------------------------------------------------
// Framing

void append_frame(Bytes& out, Command c, std::uint8_t flags, ByteView payload);
Bytes encode_frame(const Frame& f);

/// Incremental stream splitter. Output is independent of how the input is
/// chunked. A framing error condemns the deframer; later calls rethrow.
class Deframer {
public:
    explicit Deframer(std::size_t max_payload_bytes = max_payload) : max_payload_(max_payload_bytes) {}

    /// Appends bytes and returns every frame completed by them.
    std::vector<Frame> feed(ByteView chunk);
    std::size_t buffered() const noexcept { return buffer_.size(); }
    bool condemned() const noexcept { return condemned_.has_value(); }

private:
    void check_header();

    std::size_t max_payload_;
    Bytes buffer_;
    std::optional<std::string> condemned_;
};

/// Hex rendering used by the frame dump mode: `>> GET flags=00 len=12 | 01 02 ...`.
std::string dump_frame(const Frame& f, std::string_view direction);

// ---------------------------------------------------------------------------
// Batching

/// Collects frames and hands them to the sink in one write on flush. A
/// threshold breach or a round-trip command flushes automatically.
class BatchBuffer {
public:
    using Sink = std::function<void(ByteView)>;

    explicit BatchBuffer(Sink sink, std::size_t threshold = default_batch_threshold);

    void append(Command c, std::uint8_t flags, ByteView payload);
    void append(const Frame& f) { append(f.command, f.flags, f.payload); }
    void flush();

    std::size_t pending_bytes() const noexcept { return buffer_.size(); }
    std::size_t pending_frames() const noexcept { return frames_; }
    std::size_t threshold() const noexcept { return threshold_; }

private:
    Sink sink_;
    std::size_t threshold_;
    Bytes buffer_;
    std::size_t frames_ = 0;
};

// ---------------------------------------------------------------------------
// Type registries

/// Sender side: assigns ids from 1 in first-use order. Never reassigns.
class OutboundTypes {
public:
    struct Assignment {
        std::uint16_t id;
        bool is_new;
    };
    /// Throws overflow once 65535 ids are in use.
    Assignment assign(const DescriptorPtr& d);
    std::size_t size() const noexcept { return ids_.size(); }

private:
    std::map<std::string, std::uint16_t, std::less<>> ids_;
};

/// Receiver side.
class InboundTypes {
public:
    /// Throws protocol on id 0 or on an id already bound to another shape.
    void learn(std::uint16_t id, DescriptorPtr d);
    /// Throws protocol for unknown ids.
    const DescriptorPtr& lookup(std::uint16_t id) const;
    std::size_t size() const noexcept { return types_.size(); }

private:
    std::map<std::uint16_t, DescriptorPtr> types_;
};

/// TYPE_REG payload: u16 id, descriptor.
Bytes encode_type_reg(std::uint16_t id, const TypeDescriptor& d);
std::pair<std::uint16_t, DescriptorPtr> decode_type_reg(ByteView payload);

/// Writes a type reference: a registered id, or 0 followed by the inline
/// descriptor. Registration frames go out through `emit` before the
/// reference is used.
class TypeWriter {
public:
    using Emit = std::function<void(Command, ByteView)>;

    /// With registry null, every reference is inline.
    TypeWriter(OutboundTypes* registry, Emit emit) : registry_(registry), emit_(std::move(emit)) {}
    void write(Writer& w, const DescriptorPtr& d);

private:
    OutboundTypes* registry_;
    Emit emit_;
};

DescriptorPtr read_type(Reader& r, const InboundTypes& types);

} // namespace pw::wire
