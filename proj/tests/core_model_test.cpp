// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <set>

#include "pw/data_source.hpp"
#include "support/generators.hpp"

using namespace pw;

namespace {

DescriptorPtr f64() { return TypeDescriptor::scalar(TypeCode::f64); }

/// Application-owned row-major float matrix exposed through the contract
/// without copying it into a generic container.
class MatrixSource : public DataSource {
public:
    std::vector<float> cells;
    std::uint32_t rows = 0, cols = 0;

    void resize(std::uint32_t r, std::uint32_t c) {
        rows = r;
        cols = c;
        cells.assign(std::size_t(r) * c, 0.0f);
        for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<float>(i);
    }

    DescriptorPtr describe() const override {
        static const auto d = TypeDescriptor::array(TypeDescriptor::scalar(TypeCode::f32), 2);
        return d;
    }

protected:
    Value do_read(const FieldHandle&) const override {
        std::vector<Value> el(cells.begin(), cells.end());
        return Value::array({rows, cols}, std::move(el));
    }
    void do_write(const FieldHandle&, const Value& v) override {
        const auto& a = v.as_array();
        rows = a.extents[0];
        cols = a.extents[1];
        cells.clear();
        for (const auto& e : a.elements) cells.push_back(e.get<float>());
    }
};

/// A plain struct with a hand-written mapping.
struct Thermometer {
    double value = 0;
    std::string units;
    double low = 0, high = 0;
};

class ThermometerSource : public DataSource {
public:
    explicit ThermometerSource(Thermometer& t) : t_(t) {}

    DescriptorPtr describe() const override {
        static const auto d = TypeDescriptor::container({
            {"value", f64(), "reading"},
            {"units", TypeDescriptor::scalar(TypeCode::string), {}},
            {"display_limits", TypeDescriptor::container({{"low", f64(), {}}, {"high", f64(), {}}}), {}},
        });
        return d;
    }

protected:
    Value do_read(const FieldHandle& h) const override {
        auto p = h.path().to_string();
        if (p == "value") return t_.value;
        if (p == "units") return t_.units;
        if (p == "display_limits.low") return t_.low;
        if (p == "display_limits.high") return t_.high;
        return Value::container({{"low", t_.low}, {"high", t_.high}});
    }
    void do_write(const FieldHandle& h, const Value& v) override {
        auto p = h.path().to_string();
        if (p == "value") t_.value = v.get<double>();
        else if (p == "units") t_.units = v.get<std::string>();
        else if (p == "display_limits.low") t_.low = v.get<double>();
        else if (p == "display_limits.high") t_.high = v.get<double>();
        else {
            t_.low = v.as_container().find("low")->get<double>();
            t_.high = v.as_container().find("high")->get<double>();
        }
    }

private:
    Thermometer& t_;
};

DescriptorPtr nest(int levels) {
    DescriptorPtr d = f64();
    for (int i = 0; i < levels; ++i) d = TypeDescriptor::container({{"n", d, {}}});
    return d;
}

bool has_kind(const std::vector<Violation>& v, Violation::Kind k) {
    return std::any_of(v.begin(), v.end(), [&](const Violation& x) { return x.kind == k; });
}

} // namespace

TEST_CASE("describe a boxed value") {
    GenericSource src(TypeDescriptor::container({{"value", f64(), {}}}));
    auto d = src.describe();
    REQUIRE(d->code() == TypeCode::container);
    REQUIRE(d->fields().size() == 1);
    CHECK(d->fields()[0].name == "value");
    CHECK(d->fields()[0].type->code() == TypeCode::f64);
    CHECK(src.describe() == d);
}

TEST_CASE("matrix source reports bounds through traverse, not describe") {
    MatrixSource m;
    m.resize(3, 4);
    auto d = m.describe();
    CHECK(d->code() == TypeCode::array);
    CHECK(d->element()->code() == TypeCode::f32);
    CHECK(d->declared_rank() == 2);

    std::vector<std::vector<std::uint32_t>> seen;
    m.traverse([&](const PropertyPath& p, const TypeDescriptor&, std::span<const std::uint32_t> ext) {
        CHECK(p.is_root());
        seen.emplace_back(ext.begin(), ext.end());
    });
    REQUIRE(seen.size() == 1);
    CHECK(seen[0] == std::vector<std::uint32_t>{m.rows, m.cols});

    // Native resize is reflected element for element.
    m.resize(2, 2);
    m.resize(3, 3);
    auto v = m.read(*m.locate(PropertyPath::root()));
    REQUIRE(v.as_array().extents == std::vector<std::uint32_t>{3, 3});
    for (std::size_t i = 0; i < 9; ++i) CHECK(v.as_array().elements[i].get<float>() == m.cells[i]);
}

TEST_CASE("locate on a hand-written source") {
    Thermometer t;
    ThermometerSource src(t);
    auto units = src.locate("units");
    REQUIRE(units);
    CHECK(units->descriptor()->code() == TypeCode::string);
    auto high = src.locate("display_limits.high");
    REQUIRE(high);
    CHECK(high->descriptor()->code() == TypeCode::f64);
    CHECK_FALSE(src.locate("missing"));
    CHECK_FALSE(src.locate("value.deeper"));

    for (const char* bad : {"", ".x", "x.", "a..b", "1abc", "a-b", "a b"}) {
        CAPTURE(bad);
        try {
            (void)src.locate(std::string_view(bad));
            FAIL("expected a path-syntax error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::path_syntax);
        }
    }

    t.high = 12.5;
    CHECK(src.read(*high).get<double>() == 12.5);
    src.write(*src.locate("units"), Value("mm"));
    CHECK(t.units == "mm");
}

TEST_CASE("read and write through the generic container") {
    auto d = TypeDescriptor::container({
        {"count", TypeDescriptor::scalar(TypeCode::i32), {}},
        {"state", TypeDescriptor::enumerated({"off", "on"}), {}},
        {"reading", f64(), {}},
        {"samples", TypeDescriptor::array(f64(), 0), {}},
    });
    GenericSource src(d);

    auto count = *src.locate("count");
    src.write(count, Value(std::int32_t{42}));
    CHECK(src.read(count) == Value(std::int32_t{42}));

    auto state = *src.locate("state");
    src.write(state, Value::enumerated(1));
    CHECK(src.read(state).get<EnumIndex>().index == 1);

    auto reading = *src.locate("reading");
    src.write(reading, Value(9.5));
    CHECK(src.read(reading).get<double>() == 9.5);
    CHECK(src.read(count) == Value(std::int32_t{42}));

    SUBCASE("enumerated index past the labels") {
        try {
            src.write(state, Value::enumerated(5));
            FAIL("expected type mismatch");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::type_mismatch);
        }
        CHECK(src.read(state).get<EnumIndex>().index == 1);
    }

    SUBCASE("empty vector on a dynamic-rank field") {
        auto samples = *src.locate("samples");
        src.write(samples, Value::array({0}, {}));
        auto back = src.read(samples);
        CHECK(back.as_array().rank() == 1);
        CHECK(back.as_array().extents[0] == 0);
        CHECK(back.as_array().elements.empty());
    }

    SUBCASE("wrong code without coercion") {
        CHECK_THROWS_AS(src.write(reading, Value(std::int32_t{3})), Error);
    }

    SUBCASE("coercion when the source opts in") {
        src.set_coercion(true);
        src.write(reading, Value(std::int32_t{3}));
        CHECK(src.read(reading).get<double>() == 3.0);
        src.write(state, Value("off"));
        CHECK(src.read(state).get<EnumIndex>().index == 0);
    }

    SUBCASE("foreign handle") {
        GenericSource other(d);
        try {
            (void)other.read(count);
            FAIL("expected handle mismatch");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::handle_mismatch);
        }
    }

    SUBCASE("read-only field") {
        src.set_read_only(PropertyPath::parse("count"));
        try {
            src.write(count, Value(std::int32_t{1}));
            FAIL("expected access error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::access);
        }
    }
}

TEST_CASE("validate_descriptor") {
    CHECK(validate_descriptor(*f64()).empty());

    auto dup = TypeDescriptor::container({{"x", f64(), {}}, {"x", f64(), {}}});
    CHECK(has_kind(validate_descriptor(*dup), Violation::Kind::duplicate_name));

    CHECK(validate_descriptor(*nest(16)).empty());
    CHECK(has_kind(validate_descriptor(*nest(17)), Violation::Kind::too_deep));

    auto aoa = TypeDescriptor::array(TypeDescriptor::array(f64()));
    CHECK(has_kind(validate_descriptor(*aoa), Violation::Kind::array_of_array));

    CHECK(has_kind(validate_descriptor(*TypeDescriptor::enumerated({})), Violation::Kind::empty_enum));
    CHECK(has_kind(validate_descriptor(*TypeDescriptor::enumerated({"a", "a"})), Violation::Kind::duplicate_label));
    CHECK(has_kind(validate_descriptor(*TypeDescriptor::array(f64(), 8)), Violation::Kind::rank_too_large));
    CHECK(has_kind(validate_descriptor(*TypeDescriptor::container({{"a.b", f64(), {}}})),
                   Violation::Kind::invalid_name));

    // Violations are reported together, not one at a time.
    auto multi = TypeDescriptor::container({{"x", TypeDescriptor::enumerated({}), {}}, {"x", f64(), {}}});
    CHECK(validate_descriptor(*multi).size() == 2);
}

TEST_CASE("property: traverse and locate agree") {
    testing::Generator gen(7);
    for (int i = 0; i < 300; ++i) {
        auto d = gen.container_descriptor();
        GenericSource src(d, gen.value_for(*d));
        auto paths = traverse_paths(src);
        std::set<PropertyPath> reported(paths.begin(), paths.end());
        CHECK(reported.size() == paths.size());
        for (const auto& p : paths) {
            auto h = src.locate(p);
            REQUIRE(h);
            CHECK(same_shape(h->descriptor(), descriptor_at(d, p)));
        }
        // Anything locate accepts must have been reported: probe children of
        // every reported path plus some random names.
        std::vector<PropertyPath> probes;
        for (const auto& p : paths) probes.push_back(p.child(gen.name()));
        for (int k = 0; k < 5; ++k) probes.push_back(PropertyPath({gen.name()}));
        for (const auto& p : probes) CHECK(bool(src.locate(p)) == (reported.count(p) == 1));
    }
}

TEST_CASE("property: one descriptor backs many sources") {
    auto d = DescriptorPool::global().intern(TypeDescriptor::container({{"value", f64(), {}}}));
    std::vector<GenericSource> sources;
    sources.reserve(10000);
    for (int i = 0; i < 10000; ++i) sources.emplace_back(d);
    std::set<const TypeDescriptor*> distinct;
    std::set<std::uint64_t> ids;
    for (const auto& s : sources) {
        distinct.insert(s.describe().get());
        ids.insert(s.source_id());
    }
    CHECK(distinct.size() == 1);
    CHECK(ids.size() == 10000);
    // An equal but separately built descriptor interns to the same instance.
    auto again = DescriptorPool::global().intern(TypeDescriptor::container({{"value", f64(), {}}}));
    CHECK(again.get() == d.get());
    CHECK(DescriptorPool::global().id_of(again) == DescriptorPool::global().id_of(d));
}

TEST_CASE("property: write then read is identity for every scalar code") {
    testing::Generator gen(11);
    for (int c = 0; c <= static_cast<int>(TypeCode::enumerated); ++c) {
        DescriptorPtr leaf = c == 12 ? TypeDescriptor::enumerated({"a", "b", "c"})
                                     : TypeDescriptor::scalar(static_cast<TypeCode>(c));
        GenericSource src(TypeDescriptor::container({{"v", leaf, {}}}));
        auto h = *src.locate("v");
        for (int i = 0; i < 50; ++i) {
            auto v = gen.value_for(*leaf);
            src.write(h, v);
            auto back = src.read(h);
            // NaN never equals itself; compare payload bits through a container copy.
            if (auto f = v.to_f64(); f && std::isnan(*f)) CHECK(back.to_f64().has_value());
            else CHECK(back == v);
        }
    }
}

TEST_CASE("property: validation accepts generated descriptors and rejects single mutations") {
    testing::Generator gen(23);
    for (int i = 0; i < 200; ++i) {
        auto d = gen.container_descriptor();
        REQUIRE(validate_descriptor(*d).empty());

        auto fields = d->fields();
        SUBCASE("") {}
        int which = i % 5;
        std::vector<FieldDescriptor> broken = fields;
        Violation::Kind expect{};
        switch (which) {
        case 0:
            if (broken.empty()) broken.push_back({"a", f64(), {}});
            broken.push_back({broken.front().name, f64(), {}});
            expect = Violation::Kind::duplicate_name;
            break;
        case 1:
            broken.push_back({"zz_deep", nest(16), {}});
            expect = Violation::Kind::too_deep;
            break;
        case 2:
            broken.push_back({"zz_aoa", TypeDescriptor::array(TypeDescriptor::array(f64())), {}});
            expect = Violation::Kind::array_of_array;
            break;
        case 3:
            broken.push_back({"zz_enum", TypeDescriptor::enumerated({}), {}});
            expect = Violation::Kind::empty_enum;
            break;
        case 4:
            broken.push_back({"9bad", f64(), {}});
            expect = Violation::Kind::invalid_name;
            break;
        }
        auto v = validate_descriptor(*TypeDescriptor::container(broken));
        REQUIRE(v.size() == 1);
        CHECK(v[0].kind == expect);
    }
}

TEST_CASE("value conformance and defaults") {
    auto d = TypeDescriptor::container({
        {"m", TypeDescriptor::array(TypeDescriptor::scalar(TypeCode::i16), 2), {}},
        {"e", TypeDescriptor::enumerated({"a"}), {}},
    });
    auto v = default_value(*d);
    CHECK(conforms(v, *d));
    CHECK(v.find(PropertyPath::parse("m"))->as_array().rank() == 2);

    std::string why;
    auto bad = Value::container({{"m", Value::array({2, 2}, {std::int16_t{1}})}, {"e", Value::enumerated(0)}});
    CHECK_FALSE(conforms(bad, *d, &why));
    CHECK(why.find("m") != std::string::npos);
    auto wrong_rank = Value::container({{"m", Value::array({1}, {std::int16_t{1}})}, {"e", Value::enumerated(0)}});
    CHECK_FALSE(conforms(wrong_rank, *d));
}
