// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <random>

#include "pw/protocol.hpp"
#include "pw/wire.hpp"
#include "support/conversion_oracle.hpp"
#include "support/generators.hpp"

using namespace pw;
using namespace pw::wire;

namespace {

Bytes hex(std::initializer_list<int> v) {
    Bytes out;
    for (int b : v) out.push_back(static_cast<std::uint8_t>(b));
    return out;
}

/// Reference splitter over a complete buffer, written independently of
/// Deframer's incremental state machine.
std::vector<Frame> split_all(const Bytes& s) {
    std::vector<Frame> out;
    std::size_t i = 0;
    while (i + 8 <= s.size()) {
        std::size_t len = s[i + 4] | (s[i + 5] << 8) | (s[i + 6] << 16) | (std::size_t(s[i + 7]) << 24);
        if (i + 8 + len > s.size()) break;
        Frame f{static_cast<Command>(s[i + 2]), s[i + 3], Bytes(s.begin() + i + 8, s.begin() + i + 8 + len)};
        out.push_back(std::move(f));
        i += 8 + len;
    }
    return out;
}

std::size_t decode_error_offset(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const DecodeError& e) {
        return e.offset();
    }
    FAIL("no decode error");
    return 0;
}

struct CountingSink {
    std::vector<Bytes> writes;
    BatchBuffer::Sink sink() {
        return [this](ByteView b) { writes.emplace_back(b.begin(), b.end()); };
    }
};

} // namespace

TEST_CASE("descriptor encoding examples") {
    CHECK(encode_descriptor(*TypeDescriptor::scalar(TypeCode::f64)) == hex({0x0A}));
    auto d = TypeDescriptor::container({{"value", TypeDescriptor::scalar(TypeCode::f64), {}}});
    CHECK(encode_descriptor(*d) == hex({0x0D, 0x01, 0x00, 0x05, 0x00, 0x76, 0x61, 0x6C, 0x75, 0x65, 0x0A}));
    auto e = TypeDescriptor::enumerated({"off", "on"});
    CHECK(encode_descriptor(*e) == hex({0x0C, 0x02, 0x00, 0x03, 0x00, 'o', 'f', 'f', 0x02, 0x00, 'o', 'n'}));
    auto a = TypeDescriptor::array(TypeDescriptor::scalar(TypeCode::f32), 2);
    CHECK(encode_descriptor(*a) == hex({0x0E, 0x09, 0x02}));
    CHECK(same_shape(decode_descriptor(encode_descriptor(*d)), d));
}

TEST_CASE("value encoding examples") {
    CHECK(encode_value(Value(std::int32_t{1}), *TypeDescriptor::scalar(TypeCode::i32)) == hex({1, 0, 0, 0}));
    CHECK(encode_value(Value(true), *TypeDescriptor::scalar(TypeCode::boolean)) == hex({1}));
    CHECK(encode_value(Value(std::int16_t{-2}), *TypeDescriptor::scalar(TypeCode::i16)) == hex({0xFE, 0xFF}));
    CHECK(encode_value(Value("hi"), *TypeDescriptor::scalar(TypeCode::string)) == hex({2, 0, 0, 0, 'h', 'i'}));
    CHECK(encode_value(Value(1.0), *TypeDescriptor::scalar(TypeCode::f64)) ==
          hex({0, 0, 0, 0, 0, 0, 0xF0, 0x3F}));

    auto a = TypeDescriptor::array(TypeDescriptor::scalar(TypeCode::f32), 2);
    auto v = Value::array({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
    auto bytes = encode_value(v, *a);
    REQUIRE(bytes.size() == 1 + 8 + 16);
    CHECK(bytes[0] == 2);
    CHECK(Bytes(bytes.begin() + 1, bytes.begin() + 9) == hex({2, 0, 0, 0, 2, 0, 0, 0}));
    CHECK(Bytes(bytes.begin() + 9, bytes.begin() + 13) == hex({0, 0, 0x80, 0x3F}));
    CHECK(decode_value(bytes, *a) == v);

    CHECK_THROWS_AS(encode_value(Value(1.0), *TypeDescriptor::scalar(TypeCode::f32)), Error);
}

TEST_CASE("decode errors carry offsets") {
    auto d = TypeDescriptor::container({{"value", TypeDescriptor::scalar(TypeCode::f64), {}}});
    auto bytes = encode_descriptor(*d);
    bytes.pop_back();
    CHECK(decode_error_offset([&] { decode_descriptor(bytes); }) == 10);

    CHECK(decode_error_offset([&] { decode_descriptor(hex({0x0F})); }) == 0);
    CHECK(decode_error_offset([&] { decode_descriptor(hex({0x0A, 0x00})); }) == 1);
    // label "a", then a duplicate at offset 6
    CHECK(decode_error_offset([&] { decode_descriptor(hex({0x0C, 2, 0, 1, 0, 'a', 1, 0, 'a'})); }) == 6);
    CHECK(decode_error_offset([&] { decode_descriptor(hex({0x0D, 1, 0, 1, 0, '9', 0x0A})); }) == 3);

    SUBCASE("over-deep descriptors") {
        Bytes deep;
        for (int i = 0; i < 40; ++i) {
            for (int b : {0x0D, 1, 0, 1, 0, int('x')}) deep.push_back(static_cast<std::uint8_t>(b));
        }
        deep.push_back(0x0A);
        auto off = decode_error_offset([&] { decode_descriptor(deep); });
        CHECK(off <= 6 * 17);
        CHECK(off > 0);
    }
    SUBCASE("values") {
        auto i32 = TypeDescriptor::scalar(TypeCode::i32);
        CHECK(decode_error_offset([&] { decode_value(hex({1, 0, 0}), *i32); }) == 0);
        CHECK(decode_error_offset([&] { decode_value(hex({2}), *TypeDescriptor::scalar(TypeCode::boolean)); }) == 0);
        auto pair = TypeDescriptor::container(
            {{"a", i32, {}}, {"b", TypeDescriptor::enumerated({"x", "y"}), {}}});
        CHECK(decode_error_offset([&] { decode_value(hex({1, 0, 0, 0, 2, 0}), *pair); }) == 4);
        CHECK(decode_error_offset([&] { decode_value(hex({1, 0, 0, 0, 1, 0, 9}), *pair); }) == 6);
        auto arr = TypeDescriptor::array(i32, 1);
        CHECK(decode_error_offset([&] { decode_value(hex({2, 1, 0, 0, 0, 1, 0, 0, 0}), *arr); }) == 0);
        CHECK(decode_error_offset([&] { decode_value(hex({1, 0xFF, 0xFF, 0xFF, 0xFF}), *arr); }) == 0);
    }
}

TEST_CASE("codec roundtrip corpus") {
    testing::Generator gen(2024);
    int descriptors = 0, values = 0;
    for (int i = 0; i < 1500; ++i) {
        auto d = gen.container_descriptor();
        REQUIRE(validate_descriptor(*d).empty());
        auto bytes = encode_descriptor(*d);
        auto back = decode_descriptor(bytes);
        CHECK(*back == *d);
        CHECK(descriptor_depth(*back) == descriptor_depth(*d));
        ++descriptors;
        for (int k = 0; k < 3; ++k) {
            auto v = gen.value_for(*d);
            auto vb = encode_value(v, *d);
            auto w = decode_value(vb, *back);
            CHECK(testing::same_value(v, w));
            CHECK(encode_value(w, *d) == vb);
            ++values;
        }
    }
    CHECK(descriptors >= 1000);
    CHECK(values >= 3000);
}

TEST_CASE("single-byte mutations never yield non-conforming values") {
    testing::Generator gen(99);
    std::mt19937 rng(5);
    long errors = 0, decoded = 0;
    for (int i = 0; i < 400; ++i) {
        auto d = gen.container_descriptor();
        auto v = gen.value_for(*d);
        auto vb = encode_value(v, *d);
        auto db = encode_descriptor(*d);
        for (int m = 0; m < 25; ++m) {
            if (!vb.empty()) {
                auto mutated = vb;
                mutated[rng() % mutated.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);
                try {
                    auto w = decode_value(mutated, *d);
                    CHECK(conforms(w, *d));
                    ++decoded;
                } catch (const DecodeError&) {
                    ++errors;
                }
            }
            auto mutated = db;
            mutated[rng() % mutated.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);
            try {
                auto nd = decode_descriptor(mutated);
                CHECK(validate_descriptor(*nd).empty());
                ++decoded;
            } catch (const DecodeError&) {
                ++errors;
            }
        }
    }
    CHECK(errors > 0);
    CHECK(decoded > 0);
}

TEST_CASE("framing") {
    CHECK(encode_frame(Frame{Command::echo, 0, {}}) == hex({0xE7, 0x01, 0x0C, 0, 0, 0, 0, 0}));
    auto f = encode_frame(Frame{Command::get, flags::response, hex({1, 2, 3})});
    CHECK(f == hex({0xE7, 0x01, 0x04, 0x01, 3, 0, 0, 0, 1, 2, 3}));

    SUBCASE("split mid-header") {
        Bytes stream = encode_frame({Command::put, 0, hex({9, 9})});
        auto second = encode_frame({Command::echo, 0, {}});
        stream.insert(stream.end(), second.begin(), second.end());
        Deframer d;
        auto a = d.feed(ByteView(stream).subspan(0, 3));
        auto b = d.feed(ByteView(stream).subspan(3, 10));
        auto c = d.feed(ByteView(stream).subspan(13));
        CHECK(a.empty());
        REQUIRE(b.size() == 1);
        REQUIRE(c.size() == 1);
        CHECK(b[0].command == Command::put);
        CHECK(c[0].command == Command::echo);
        CHECK(d.buffered() == 0);
    }
    SUBCASE("bad magic condemns") {
        Deframer d;
        CHECK_THROWS_AS(d.feed(hex({0x00, 0x01, 0x0C, 0, 0, 0, 0, 0})), Error);
        CHECK(d.condemned());
        CHECK_THROWS_AS(d.feed(encode_frame({Command::echo, 0, {}})), Error);
    }
    SUBCASE("bad version and command") {
        Deframer d1, d2;
        CHECK_THROWS_AS(d1.feed(hex({0xE7, 0x02})), Error);
        CHECK_THROWS_AS(d2.feed(hex({0xE7, 0x01, 0x44})), Error);
    }
    SUBCASE("oversize rejected before buffering") {
        Deframer d;
        Bytes header = hex({0xE7, 0x01, 0x05, 0, 0x01, 0, 0, 0x01});
        try {
            d.feed(header);
            FAIL("accepted");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::protocol);
        }
        CHECK(d.buffered() <= header_size);
        Bytes big(max_payload + 1);
        CHECK_THROWS_AS(encode_frame({Command::put, 0, big}), Error);
        Bytes exact(max_payload);
        CHECK(encode_frame({Command::put, 0, exact}).size() == max_payload + header_size);
    }
}

TEST_CASE("deframing is chunk invariant") {
    std::mt19937 rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        Bytes stream;
        int n = 1 + static_cast<int>(rng() % 12);
        for (int i = 0; i < n; ++i) {
            Bytes payload(rng() % 40);
            for (auto& b : payload) b = static_cast<std::uint8_t>(rng());
            append_frame(stream, static_cast<Command>(1 + rng() % 13), static_cast<std::uint8_t>(rng() % 2), payload);
        }
        auto expected = split_all(stream);
        REQUIRE(expected.size() == static_cast<std::size_t>(n));

        for (int mode = 0; mode < 3; ++mode) {
            Deframer d;
            std::vector<Frame> got;
            std::size_t pos = 0;
            while (pos < stream.size()) {
                std::size_t len = mode == 0 ? 1 : mode == 1 ? 1 + rng() % 17 : stream.size();
                len = std::min(len, stream.size() - pos);
                for (auto& f : d.feed(ByteView(stream).subspan(pos, len))) got.push_back(std::move(f));
                pos += len;
            }
            CHECK(got == expected);
        }
    }
}

TEST_CASE("batching") {
    SUBCASE("three PUTs then explicit flush") {
        CountingSink s;
        BatchBuffer b(s.sink());
        Bytes expected;
        for (int i = 0; i < 3; ++i) {
            b.append(Command::put, 0, hex({i}));
            append_frame(expected, Command::put, 0, hex({i}));
        }
        CHECK(s.writes.empty());
        CHECK(b.pending_frames() == 3);
        b.flush();
        REQUIRE(s.writes.size() == 1);
        CHECK(s.writes[0] == expected);
        CHECK(split_all(s.writes[0]).size() == 3);
        b.flush();
        CHECK(s.writes.size() == 1);
    }
    SUBCASE("threshold breach flushes") {
        CountingSink s;
        BatchBuffer b(s.sink());
        Bytes payload(1000);
        std::size_t total = 0;
        int appended = 0;
        while (s.writes.empty()) {
            b.append(Command::put, 0, payload);
            total += payload.size() + header_size;
            ++appended;
        }
        CHECK(total > default_batch_threshold);
        CHECK(total - (payload.size() + header_size) <= default_batch_threshold);
        CHECK(s.writes[0].size() == total);
        CHECK(split_all(s.writes[0]).size() == static_cast<std::size_t>(appended));
        CHECK(b.pending_bytes() == 0);
    }
    SUBCASE("GET forces flush of everything queued") {
        CountingSink s;
        BatchBuffer b(s.sink());
        b.append(Command::put, 0, hex({1}));
        b.append(Command::put, 0, hex({2}));
        CHECK(s.writes.empty());
        b.append(Command::get, 0, hex({3}));
        REQUIRE(s.writes.size() == 1);
        auto frames = split_all(s.writes[0]);
        REQUIRE(frames.size() == 3);
        CHECK(frames[0].command == Command::put);
        CHECK(frames[2].command == Command::get);
    }
}

TEST_CASE("type registries") {
    OutboundTypes out;
    InboundTypes in;
    auto d = TypeDescriptor::container({{"x", TypeDescriptor::scalar(TypeCode::f64), {}}});
    auto descriptor_bytes = encode_descriptor(*d);
    Bytes wire_bytes;
    CountingSink s;
    BatchBuffer batch(s.sink());
    TypeWriter tw(&out, [&](Command c, ByteView p) { batch.append(c, 0, p); });
    for (int i = 0; i < 50; ++i) {
        proto::GetReply reply{static_cast<std::uint32_t>(i), 1, d, Value::container({{"x", double(i)}})};
        auto p = proto::encode(reply, tw);
        batch.append(Command::get, flags::response, p);
    }
    batch.flush();
    for (auto& w : s.writes) wire_bytes.insert(wire_bytes.end(), w.begin(), w.end());
    auto frames = split_all(wire_bytes);
    CHECK(frames.size() == 51);
    CHECK(frames[0].command == Command::type_reg);
    auto occurrences = 0;
    for (std::size_t i = 0; i + descriptor_bytes.size() <= wire_bytes.size(); ++i)
        if (std::equal(descriptor_bytes.begin(), descriptor_bytes.end(), wire_bytes.begin() + i)) ++occurrences;
    CHECK(occurrences == 1);

    auto [id, reg] = decode_type_reg(frames[0].payload);
    CHECK(id == 1);
    in.learn(id, reg);
    for (std::size_t i = 1; i < frames.size(); ++i) {
        auto r = proto::decode_get_reply(frames[i].payload, in);
        CHECK(r.req == i - 1);
        CHECK(*r.value.find(PropertyPath::parse("x")) == Value(double(i - 1)));
    }

    CHECK(out.assign(TypeDescriptor::scalar(TypeCode::i8)).id == 2);
    CHECK_FALSE(out.assign(d).is_new);
    CHECK_THROWS_AS(in.learn(0, d), Error);
    CHECK_THROWS_AS(in.learn(1, TypeDescriptor::scalar(TypeCode::i8)), Error);
    CHECK_NOTHROW(in.learn(1, d));
    CHECK_THROWS_AS(in.lookup(7), Error);

    SUBCASE("inline references need no registry") {
        TypeWriter inline_writer(nullptr, [](Command, ByteView) { FAIL("registration emitted"); });
        proto::GetReply reply{3, 9, d, Value::container({{"x", 2.5}})};
        auto r = proto::decode_get_reply(proto::encode(reply, inline_writer), InboundTypes{});
        CHECK(r.seq == 9);
        CHECK(r.value == reply.value);
    }
}

TEST_CASE("message payload roundtrips") {
    InboundTypes in;
    OutboundTypes out;
    TypeWriter tw(&out, [&](Command, ByteView p) {
        auto [id, d] = decode_type_reg(p);
        in.learn(id, d);
    });
    auto schema = TypeDescriptor::container({{"value", TypeDescriptor::scalar(TypeCode::f64), {}}});

    auto h = proto::decode_hello(proto::encode(proto::Hello{1, "client"}));
    CHECK(h.peer == "client");
    auto o = proto::decode_open_request(proto::encode(proto::OpenRequest{4, "temp"}));
    CHECK(o.pv == "temp");
    auto orp = proto::decode_open_reply(proto::encode(proto::OpenReply{4, 2, schema, {"a", "b"}}, tw), in);
    CHECK(orp.channel == 2);
    CHECK(*orp.schema == *schema);
    CHECK(orp.event_kinds.size() == 2);
    auto g = proto::decode_get_request(proto::encode(proto::GetRequest{5, 2, {PropertyPath::parse("a.b")}}));
    CHECK(g.paths.at(0).to_string() == "a.b");

    proto::PutRequest put{6, proto::PutRequest::coerce, {{2, schema, Value::container({{"value", 1.5}})}}};
    auto pr = proto::decode_put_request(proto::encode(put, tw), in);
    CHECK(pr.flags == proto::PutRequest::coerce);
    CHECK(pr.parts.at(0).value == put.parts[0].value);
    proto::PutReply reply{6, {}};
    reply.results.push_back({true, 3, {"alarm_change"}});
    auto rr = proto::decode_put_reply(proto::encode(reply));
    CHECK(rr.results.at(0).seq == 3);
    CHECK(rr.results.at(0).fired.at(0) == "alarm_change");

    proto::MonitorRequest mr{7, 2, 11, proto::MonitorRequest::no_initial, {"value_change_default"},
                             {PropertyPath::parse("value")}};
    auto mr2 = proto::decode_monitor_request(proto::encode(mr));
    CHECK(mr2.sub == 11);
    CHECK(mr2.flags == proto::MonitorRequest::no_initial);
    CHECK(mr2.kinds == mr.kinds);

    proto::MonitorEvent me{11, 42, -5, true, {"x"}, schema, Value::container({{"value", 2.0}})};
    auto me2 = proto::decode_monitor_event(proto::encode(me, tw), in);
    CHECK(me2.seq == 42);
    CHECK(me2.time_stamp == -5);
    CHECK(me2.initial);

    proto::SnapshotRequest sr{8, 12, 0, {"pulse", "every_update", {{"s1", PropertyPath::parse("value")}}}};
    auto sr2 = proto::decode_snapshot_request(proto::encode(sr));
    CHECK(sr2.spec.trigger_event == "every_update");
    CHECK(sr2.spec.members.at(0).pv == "s1");

    proto::SnapshotEvent se{12, 77, false, schema, Value::container({{"value", 3.0}})};
    CHECK(proto::decode_snapshot_event(proto::encode(se, tw), in).seq_tag == 77);

    proto::EventRegRequest er{9, 0, "trip", proto::PredicateSpec::parse("below value -1.5")};
    auto er2 = proto::decode_event_reg(proto::encode(er));
    CHECK(er2.predicate.kind == proto::PredicateSpec::Kind::below);
    CHECK(er2.predicate.threshold == -1.5);
    CHECK(er2.predicate.to_string() == "below value -1.5");

    auto e = proto::decode_error(proto::encode(proto::ErrorReply{3, ErrorCode::unknown_pv, "nope"}));
    CHECK(e.code == ErrorCode::unknown_pv);
    CHECK(proto::peek_req(proto::encode(proto::Ack{99})) == 99);

    CHECK_THROWS_AS(proto::decode_ack(hex({1, 0, 0, 0, 5})), DecodeError);
}

TEST_CASE("declarative predicates") {
    using proto::PredicateSpec;
    auto v = [](double x) { return Value::container({{"value", x}}); };
    auto below = PredicateSpec::parse("below value 0").compile();
    CHECK(below(v(1), v(-1)));
    CHECK_FALSE(below(v(-1), v(-2)));
    auto above = PredicateSpec::parse("above value 10").compile();
    CHECK(above(v(10), v(11)));
    CHECK_FALSE(above(v(11), v(12)));
    auto changed = PredicateSpec::parse("field_changed value").compile();
    CHECK(changed(v(1), v(2)));
    CHECK_FALSE(changed(v(1), v(1)));
    CHECK(PredicateSpec::parse("always").compile()(v(0), v(0)));
    for (auto bad : {"", "sometimes", "below value", "below value x", "always value", "field_changed"})
        CHECK_THROWS_AS(PredicateSpec::parse(bad), Error);
}

TEST_CASE("frame dump") {
    auto text = dump_frame(Frame{Command::echo, 0, {}}, ">>");
    CHECK(text == ">> ECHO flags=00 len=0 | E7 01 0C 00 00 00 00 00");
}
