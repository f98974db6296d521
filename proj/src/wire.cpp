// SPDX-License-Identifier: Apache-2.0
#include "pw/wire.hpp"

#include <bit>
#include <cstdio>
#include <set>

namespace pw::wire {

std::string_view command_name(Command c) noexcept {
    switch (c) {
    case Command::hello: return "HELLO";
    case Command::type_reg: return "TYPE_REG";
    case Command::channel_open: return "CHANNEL_OPEN";
    case Command::get: return "GET";
    case Command::put: return "PUT";
    case Command::monitor_sub: return "MONITOR_SUB";
    case Command::monitor_evt: return "MONITOR_EVT";
    case Command::put_composite: return "PUT_COMPOSITE";
    case Command::snap_sub: return "SNAP_SUB";
    case Command::snap_evt: return "SNAP_EVT";
    case Command::error: return "ERROR";
    case Command::echo: return "ECHO";
    case Command::event_reg: return "EVENT_REG";
    }
    return "?";
}

bool is_known_command(std::uint8_t raw) noexcept { return raw >= 0x01 && raw <= 0x0D; }

bool requires_round_trip(Command c) noexcept {
    return c == Command::hello || c == Command::channel_open || c == Command::get || c == Command::echo;
}

// ---------------------------------------------------------------------------
// Writer / Reader

void Writer::f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }

void Writer::str16(std::string_view s) {
    if (s.size() > 0xFFFF) throw Error(ErrorCode::overflow, "text longer than 65535 bytes");
    u16(static_cast<std::uint16_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
}

void Writer::str32(std::string_view s) {
    if (s.size() > max_payload) throw Error(ErrorCode::overflow, "text exceeds the payload cap");
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
}

void Reader::need(std::size_t n) const {
    if (remaining() < n)
        fail("truncated input: need " + std::to_string(n) + " bytes, have " + std::to_string(remaining()));
}

void Reader::fail(const std::string& message) const { throw DecodeError(offset(), message); }
void Reader::fail_at(std::size_t at, const std::string& message) const { throw DecodeError(at, message); }

std::uint8_t Reader::u8() {
    need(1);
    return data_[pos_++];
}

double Reader::f64() { return std::bit_cast<double>(u64()); }

std::string Reader::str16() {
    auto n = u16();
    auto b = raw(n);
    return {b.begin(), b.end()};
}

std::string Reader::str32() {
    auto n = u32();
    auto b = raw(n);
    return {b.begin(), b.end()};
}

ByteView Reader::raw(std::size_t n) {
    need(n);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
}

void Reader::expect_end(std::string_view what) const {
    if (!done()) fail(std::to_string(remaining()) + " trailing bytes after " + std::string(what));
}

// ---------------------------------------------------------------------------
// Descriptors

void encode_descriptor(Writer& w, const TypeDescriptor& d) {
    w.u8(static_cast<std::uint8_t>(d.code()));
    switch (d.code()) {
    case TypeCode::enumerated:
        w.u16(static_cast<std::uint16_t>(d.labels().size()));
        for (const auto& l : d.labels()) w.str16(l);
        break;
    case TypeCode::container:
        w.u16(static_cast<std::uint16_t>(d.fields().size()));
        for (const auto& f : d.fields()) {
            w.str16(f.name);
            encode_descriptor(w, *f.type);
        }
        break;
    case TypeCode::array:
        encode_descriptor(w, *d.element());
        w.u8(d.declared_rank());
        break;
    default: break;
    }
}

Bytes encode_descriptor(const TypeDescriptor& d) {
    ensure_valid(d);
    Bytes out;
    Writer w(out);
    encode_descriptor(w, d);
    return out;
}

namespace {

DescriptorPtr decode_descriptor_at(Reader& r, std::size_t depth) {
    const auto at = r.offset();
    if (depth > max_depth) r.fail_at(at, "descriptor nesting exceeds " + std::to_string(max_depth) + " levels");
    const auto raw = r.u8();
    if (!is_valid_code(raw)) r.fail_at(at, "unknown type code " + std::to_string(raw));
    const auto code = static_cast<TypeCode>(raw);
    switch (code) {
    case TypeCode::enumerated: {
        auto n = r.u16();
        if (n == 0) r.fail_at(at, "enumeration without labels");
        std::vector<std::string> labels;
        std::set<std::string> seen;
        for (std::uint16_t i = 0; i < n; ++i) {
            auto label_at = r.offset();
            auto l = r.str16();
            if (l.empty()) r.fail_at(label_at, "empty enumeration label");
            if (!seen.insert(l).second) r.fail_at(label_at, "duplicate enumeration label '" + l + "'");
            labels.push_back(std::move(l));
        }
        return TypeDescriptor::enumerated(std::move(labels));
    }
    case TypeCode::container: {
        auto n = r.u16();
        if (n > max_fields) r.fail_at(at, "container with " + std::to_string(n) + " fields");
        std::vector<FieldDescriptor> fields;
        std::set<std::string> seen;
        for (std::uint16_t i = 0; i < n; ++i) {
            auto name_at = r.offset();
            auto name = r.str16();
            if (!is_valid_name(name)) r.fail_at(name_at, "invalid property name");
            if (!seen.insert(name).second) r.fail_at(name_at, "duplicate property name '" + name + "'");
            auto type = decode_descriptor_at(r, depth + 1);
            fields.push_back({std::move(name), std::move(type), {}});
        }
        return TypeDescriptor::container(std::move(fields));
    }
    case TypeCode::array: {
        auto element = decode_descriptor_at(r, depth + 1);
        if (element->code() == TypeCode::array) r.fail_at(at, "array of arrays");
        auto rank_at = r.offset();
        auto rank = r.u8();
        if (rank > max_rank) r.fail_at(rank_at, "declared rank " + std::to_string(rank) + " exceeds 7");
        return TypeDescriptor::array(std::move(element), rank);
    }
    default: return TypeDescriptor::scalar(code);
    }
}

} // namespace

DescriptorPtr decode_descriptor(Reader& r) {
    const auto at = r.offset();
    auto d = decode_descriptor_at(r, 0);
    auto violations = validate_descriptor(*d);
    if (!violations.empty())
        r.fail_at(at, "invalid descriptor: " + std::string(to_string(violations.front().kind)) + " " +
                          violations.front().path);
    return DescriptorPool::global().intern(d);
}

DescriptorPtr decode_descriptor(ByteView bytes) {
    Reader r(bytes);
    auto d = decode_descriptor(r);
    r.expect_end("descriptor");
    return d;
}

// ---------------------------------------------------------------------------
// Values

namespace {

void encode_unchecked(Writer& w, const Value& v, const TypeDescriptor& d) {
    std::visit(
        [&](const auto& x) {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, bool>) {
                w.u8(x ? 1 : 0);
            } else if constexpr (std::is_integral_v<T>) {
                w.put_le(static_cast<std::make_unsigned_t<T>>(x));
            } else if constexpr (std::is_same_v<T, float>) {
                w.u32(std::bit_cast<std::uint32_t>(x));
            } else if constexpr (std::is_same_v<T, double>) {
                w.f64(x);
            } else if constexpr (std::is_same_v<T, std::string>) {
                w.str32(x);
            } else if constexpr (std::is_same_v<T, EnumIndex>) {
                w.u16(x.index);
            } else if constexpr (std::is_same_v<T, Container>) {
                for (std::size_t i = 0; i < x.fields.size(); ++i)
                    encode_unchecked(w, x.fields[i].value, *d.fields()[i].type);
            } else {
                w.u8(static_cast<std::uint8_t>(x.extents.size()));
                for (auto e : x.extents) w.u32(e);
                for (const auto& e : x.elements) encode_unchecked(w, e, *d.element());
            }
        },
        v.storage());
}

/// Smallest possible encoding of a value of d.
std::size_t min_size(const TypeDescriptor& d) {
    switch (d.code()) {
    case TypeCode::boolean:
    case TypeCode::i8:
    case TypeCode::u8: return 1;
    case TypeCode::i16:
    case TypeCode::u16:
    case TypeCode::enumerated: return 2;
    case TypeCode::i32:
    case TypeCode::u32:
    case TypeCode::f32:
    case TypeCode::string: return 4;
    case TypeCode::i64:
    case TypeCode::u64:
    case TypeCode::f64: return 8;
    case TypeCode::container: {
        std::size_t n = 0;
        for (const auto& f : d.fields()) n += min_size(*f.type);
        return n;
    }
    case TypeCode::array: return 5;
    }
    return 1;
}

template <class T>
Value read_int(Reader& r) {
    return Value(static_cast<T>(r.get_le<std::make_unsigned_t<T>>()));
}

Value decode_at(Reader& r, const TypeDescriptor& d) {
    const auto at = r.offset();
    switch (d.code()) {
    case TypeCode::boolean: {
        auto b = r.u8();
        if (b > 1) r.fail_at(at, "boolean byte " + std::to_string(b));
        return Value(b == 1);
    }
    case TypeCode::i8: return read_int<std::int8_t>(r);
    case TypeCode::i16: return read_int<std::int16_t>(r);
    case TypeCode::i32: return read_int<std::int32_t>(r);
    case TypeCode::i64: return read_int<std::int64_t>(r);
    case TypeCode::u8: return read_int<std::uint8_t>(r);
    case TypeCode::u16: return read_int<std::uint16_t>(r);
    case TypeCode::u32: return read_int<std::uint32_t>(r);
    case TypeCode::u64: return read_int<std::uint64_t>(r);
    case TypeCode::f32: return Value(std::bit_cast<float>(r.u32()));
    case TypeCode::f64: return Value(r.f64());
    case TypeCode::string: return Value(r.str32());
    case TypeCode::enumerated: {
        auto i = r.u16();
        if (i >= d.labels().size()) r.fail_at(at, "enumerated index " + std::to_string(i) + " out of range");
        return Value::enumerated(i);
    }
    case TypeCode::container: {
        Container c;
        c.fields.reserve(d.fields().size());
        for (const auto& f : d.fields()) c.fields.push_back({f.name, decode_at(r, *f.type)});
        return Value(std::move(c));
    }
    case TypeCode::array: {
        auto rank = r.u8();
        if (rank == 0 || rank > max_rank) r.fail_at(at, "array rank " + std::to_string(rank));
        if (d.declared_rank() != 0 && rank != d.declared_rank())
            r.fail_at(at, "array rank " + std::to_string(rank) + " where " + std::to_string(d.declared_rank()) +
                              " is declared");
        Array a;
        std::uint64_t count = 1;
        for (std::uint8_t i = 0; i < rank; ++i) {
            auto e = r.u32();
            a.extents.push_back(e);
            count *= e;
            if (count > max_payload) r.fail_at(at, "array element count exceeds the payload cap");
        }
        const auto each = min_size(*d.element());
        // Zero-width elements are still allocated; bound them separately.
        if (each == 0 && count > 65536) r.fail_at(at, "array of empty elements too large");
        if (count * each > r.remaining())
            r.fail_at(at, "array of " + std::to_string(count) + " elements exceeds the remaining input");
        a.elements.reserve(count);
        for (std::uint64_t i = 0; i < count; ++i) a.elements.push_back(decode_at(r, *d.element()));
        return Value(std::move(a));
    }
    }
    r.fail_at(at, "unknown type code");
}

} // namespace

void encode_value(Writer& w, const Value& v, const TypeDescriptor& d) {
    ensure_conforms(v, d);
    encode_unchecked(w, v, d);
}

Bytes encode_value(const Value& v, const TypeDescriptor& d) {
    Bytes out;
    Writer w(out);
    encode_value(w, v, d);
    return out;
}

Value decode_value(Reader& r, const TypeDescriptor& d) { return decode_at(r, d); }

Value decode_value(ByteView bytes, const TypeDescriptor& d) {
    Reader r(bytes);
    auto v = decode_at(r, d);
    r.expect_end("value");
    return v;
}

// ---------------------------------------------------------------------------
// Framing

void append_frame(Bytes& out, Command c, std::uint8_t flags, ByteView payload) {
    if (payload.size() > max_payload)
        throw Error(ErrorCode::overflow, "payload of " + std::to_string(payload.size()) + " bytes exceeds the cap");
    Writer w(out);
    w.u8(magic);
    w.u8(version);
    w.u8(static_cast<std::uint8_t>(c));
    w.u8(flags);
    w.u32(static_cast<std::uint32_t>(payload.size()));
    w.raw(payload);
}

Bytes encode_frame(const Frame& f) {
    Bytes out;
    append_frame(out, f.command, f.flags, f.payload);
    return out;
}

void Deframer::check_header() {
    auto condemn = [&](std::string msg) {
        condemned_ = msg;
        throw Error(ErrorCode::protocol, msg);
    };
    if (buffer_.size() >= 1 && buffer_[0] != magic) condemn("bad frame magic " + std::to_string(buffer_[0]));
    if (buffer_.size() >= 2 && buffer_[1] != version) condemn("unsupported protocol version " + std::to_string(buffer_[1]));
    if (buffer_.size() >= 3 && !is_known_command(buffer_[2])) condemn("unknown command " + std::to_string(buffer_[2]));
    if (buffer_.size() >= header_size) {
        std::uint32_t len = 0;
        for (int i = 0; i < 4; ++i) len |= std::uint32_t(buffer_[4 + i]) << (8 * i);
        if (len > max_payload_) condemn("frame payload of " + std::to_string(len) + " bytes exceeds the cap");
    }
}

std::vector<Frame> Deframer::feed(ByteView chunk) {
    if (condemned_) throw Error(ErrorCode::protocol, *condemned_);
    std::vector<Frame> out;
    std::size_t pos = 0;
    while (pos < chunk.size()) {
        if (buffer_.size() < header_size) {
            auto take = std::min(header_size - buffer_.size(), chunk.size() - pos);
            buffer_.insert(buffer_.end(), chunk.begin() + pos, chunk.begin() + pos + take);
            pos += take;
            check_header();
            if (buffer_.size() < header_size) break;
        }
        std::uint32_t len = 0;
        for (int i = 0; i < 4; ++i) len |= std::uint32_t(buffer_[4 + i]) << (8 * i);
        auto take = std::min<std::size_t>(header_size + len - buffer_.size(), chunk.size() - pos);
        buffer_.insert(buffer_.end(), chunk.begin() + pos, chunk.begin() + pos + take);
        pos += take;
        if (buffer_.size() == header_size + len) {
            Frame f;
            f.command = static_cast<Command>(buffer_[2]);
            f.flags = buffer_[3];
            f.payload.assign(buffer_.begin() + header_size, buffer_.end());
            out.push_back(std::move(f));
            buffer_.clear();
        }
    }
    return out;
}

std::string dump_frame(const Frame& f, std::string_view direction) {
    std::string out(direction);
    char head[64];
    std::snprintf(head, sizeof head, " %s flags=%02X len=%zu |", std::string(command_name(f.command)).c_str(),
                  f.flags, f.payload.size());
    out += head;
    auto bytes = encode_frame(f);
    for (auto b : bytes) {
        char h[4];
        std::snprintf(h, sizeof h, " %02X", b);
        out += h;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batching

BatchBuffer::BatchBuffer(Sink sink, std::size_t threshold) : sink_(std::move(sink)), threshold_(threshold) {}

void BatchBuffer::append(Command c, std::uint8_t flags, ByteView payload) {
    append_frame(buffer_, c, flags, payload);
    ++frames_;
    if (requires_round_trip(c) || buffer_.size() > threshold_) flush();
}

void BatchBuffer::flush() {
    if (buffer_.empty()) return;
    Bytes out;
    out.swap(buffer_);
    frames_ = 0;
    sink_(out);
}

// ---------------------------------------------------------------------------
// Registries

OutboundTypes::Assignment OutboundTypes::assign(const DescriptorPtr& d) {
    auto key = signature(*d);
    if (auto it = ids_.find(key); it != ids_.end()) return {it->second, false};
    if (ids_.size() >= 0xFFFF) throw Error(ErrorCode::overflow, "type id space exhausted");
    auto id = static_cast<std::uint16_t>(ids_.size() + 1);
    ids_.emplace(std::move(key), id);
    return {id, true};
}

void InboundTypes::learn(std::uint16_t id, DescriptorPtr d) {
    if (id == 0) throw Error(ErrorCode::protocol, "type id 0 is reserved");
    auto [it, fresh] = types_.emplace(id, d);
    if (!fresh && !same_shape(it->second, d))
        throw Error(ErrorCode::protocol, "type id " + std::to_string(id) + " reassigned");
}

const DescriptorPtr& InboundTypes::lookup(std::uint16_t id) const {
    auto it = types_.find(id);
    if (it == types_.end()) throw Error(ErrorCode::protocol, "unknown type id " + std::to_string(id));
    return it->second;
}

Bytes encode_type_reg(std::uint16_t id, const TypeDescriptor& d) {
    Bytes out;
    Writer w(out);
    w.u16(id);
    encode_descriptor(w, d);
    return out;
}

std::pair<std::uint16_t, DescriptorPtr> decode_type_reg(ByteView payload) {
    Reader r(payload);
    auto id = r.u16();
    auto d = decode_descriptor(r);
    r.expect_end("TYPE_REG");
    return {id, std::move(d)};
}

void TypeWriter::write(Writer& w, const DescriptorPtr& d) {
    if (!registry_) {
        w.u16(0);
        encode_descriptor(w, *d);
        return;
    }
    auto a = registry_->assign(d);
    if (a.is_new) {
        auto reg = encode_type_reg(a.id, *d);
        emit_(Command::type_reg, reg);
    }
    w.u16(a.id);
}

DescriptorPtr read_type(Reader& r, const InboundTypes& types) {
    auto at = r.offset();
    auto id = r.u16();
    if (id == 0) return decode_descriptor(r);
    try {
        return types.lookup(id);
    } catch (const Error& e) {
        throw DecodeError(at, e.what());
    }
}

} // namespace pw::wire
