// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <atomic>
#include <cmath>
#include <random>
#include <set>
#include <thread>

#include "pw/pv.hpp"

using namespace pw;

namespace {

DescriptorPtr f64() { return TypeDescriptor::scalar(TypeCode::f64); }
DescriptorPtr i64() { return TypeDescriptor::scalar(TypeCode::i64); }

Value val(double v) { return Value::container({{"value", v}}); }

std::vector<std::string> top_level(const DataSource& s) {
    std::vector<std::string> out;
    s.traverse([&](const PropertyPath& p, const TypeDescriptor&, std::span<const std::uint32_t>) {
        if (p.size() == 1) out.push_back(p.to_string());
    });
    return out;
}

/// Independent count of dead-band notifications for a stream.
std::vector<std::size_t> deadband_oracle(const std::vector<double>& stream, double band) {
    std::vector<std::size_t> fired;
    bool have = false;
    double last = 0;
    for (std::size_t i = 0; i < stream.size(); ++i) {
        double diff = stream[i] - last;
        if (diff < 0) diff = -diff;
        if (!have || diff > band) {
            fired.push_back(i);
            last = stream[i];
            have = true;
        }
    }
    return fired;
}

std::vector<std::size_t> fired_at(ProcessVariable& pv, const std::vector<double>& stream, std::string_view kind) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < stream.size(); ++i)
        if (pv.post(val(stream[i]), 1).fired_kind(kind)) out.push_back(i);
    return out;
}

} // namespace

TEST_CASE("built-in property and event sets") {
    CHECK(builtin_properties.size() == 15);
    CHECK(builtin_event_kinds.size() == 3);
    std::set<std::string_view> names;
    for (auto p : builtin_properties) names.insert(property_name(p));
    CHECK(names.size() == 15);
    for (auto n : {"name", "class", "data_type", "vector_dimension", "value", "time_stamp", "units", "enum_labels",
                   "display_limits", "control_limits", "alarm_limits", "alarm_condition", "alarm_ack_transient",
                   "alarm_ack_severity", "precision"})
        CHECK(names.count(n) == 1);
    for (auto k : {"value_change_default", "value_change_archive", "alarm_change"}) CHECK(is_builtin_event(k));
    CHECK_FALSE(is_builtin_event("every_update"));
}

TEST_CASE("create_pv") {
    auto pv = ProcessVariable::create("temp", table1_schema());
    auto props = pv->properties();
    CHECK(top_level(props).size() == 15);
    CHECK(pv->seq() == 0);
    CHECK(pv->alarm().severity == Severity::none);
    CHECK(props.read(*props.locate("name")).get<std::string>() == "temp");
    CHECK(props.read(*props.locate("units")).get<std::string>().empty());
    CHECK(props.read(*props.locate("control_limits.high")).get<double>() == 0.0);
    CHECK(props.read(*props.locate("precision")).get<std::int16_t>() == 0);
    CHECK(props.read(*props.locate("data_type")).get<std::string>() == "f64");

    SUBCASE("extra property") {
        auto schema = table1_schema(f64(), {{"calibration_matrix", TypeDescriptor::array(f64(), 2), {}}});
        auto cal = ProcessVariable::create("cal", schema);
        auto paths = traverse_paths(cal->properties());
        CHECK(std::find(paths.begin(), paths.end(), PropertyPath::parse("calibration_matrix")) != paths.end());
    }
    SUBCASE("minimal schema gains the built-ins") {
        auto d = TypeDescriptor::container({{"value", i64(), {}}, {"time_stamp", i64(), {}}});
        auto p = ProcessVariable::create("counter", d, Value::container({{"value", std::int64_t{7}}}));
        CHECK(top_level(p->properties()).size() == 15);
        CHECK(p->state().find(PropertyPath::parse("value"))->get<std::int64_t>() == 7);
    }
    SUBCASE("errors") {
        auto no_value = TypeDescriptor::container({{"time_stamp", i64(), {}}});
        CHECK_THROWS_AS(ProcessVariable::create("x", no_value), Error);
        auto no_ts = TypeDescriptor::container({{"value", f64(), {}}});
        CHECK_THROWS_AS(ProcessVariable::create("x", no_ts), Error);
        auto bad_builtin = TypeDescriptor::container(
            {{"value", f64(), {}}, {"time_stamp", i64(), {}}, {"units", f64(), {}}});
        CHECK_THROWS_AS(ProcessVariable::create("x", bad_builtin), Error);
        CHECK_THROWS_AS(ProcessVariable::create("x", f64()), Error);
        CHECK_THROWS_AS(ProcessVariable::create("bad name", table1_schema()), Error);
        CHECK_THROWS_AS(ProcessVariable::create("x", table1_schema(), Value("no")), Error);
    }
}

TEST_CASE("evaluate_deadband examples") {
    CHECK_FALSE(evaluate_deadband(0.0, 5.0, 5.0));
    CHECK(evaluate_deadband(0.0, 5.0001, 5.0));
    CHECK(evaluate_deadband(std::nullopt, 123.0, 5.0));
    CHECK_FALSE(evaluate_deadband(3.0, 3.0, 0.0));
}

TEST_CASE("dead band firing") {
    SUBCASE("first post fires both value kinds") {
        auto pv = ProcessVariable::create("a", table1_schema());
        auto r = pv->post(val(0.0));
        CHECK(r.committed);
        CHECK(r.seq == 1);
        CHECK(r.fired_kind(value_change_default));
        CHECK(r.fired_kind(value_change_archive));
        CHECK_FALSE(r.fired_kind(alarm_change));
    }
    SUBCASE("posts 0..6 with band 5") {
        auto pv = ProcessVariable::create("a", table1_schema(), {}, {5.0, 0.0});
        std::vector<double> s{0, 1, 2, 3, 4, 5, 6};
        auto got = fired_at(*pv, s, value_change_default);
        CHECK(got == std::vector<std::size_t>{0, 6});
        CHECK(got == deadband_oracle(s, 5.0));
    }
    SUBCASE("ramp 0..100 with band 5") {
        auto pv = ProcessVariable::create("a", table1_schema(), {}, {5.0, 0.0});
        std::vector<double> s;
        for (int i = 0; i <= 100; ++i) s.push_back(i);
        auto got = fired_at(*pv, s, value_change_default);
        CHECK(got.size() == 17);
        CHECK(got == deadband_oracle(s, 5.0));
    }
    SUBCASE("bands are independent") {
        std::mt19937_64 rng(7);
        std::normal_distribution<double> step(0.0, 2.0);
        std::vector<double> s{0};
        for (int i = 0; i < 2000; ++i) s.push_back(s.back() + step(rng));
        for (double archive : {0.0, 1.0, 3.0, 10.0}) {
            auto pv = ProcessVariable::create("a", table1_schema(), {}, {2.5, archive});
            std::vector<std::size_t> def, arc;
            for (std::size_t i = 0; i < s.size(); ++i) {
                auto r = pv->post(val(s[i]));
                if (r.fired_kind(value_change_default)) def.push_back(i);
                if (r.fired_kind(value_change_archive)) arc.push_back(i);
            }
            CHECK(def == deadband_oracle(s, 2.5));
            CHECK(arc == deadband_oracle(s, archive));
        }
    }
    SUBCASE("non-numeric value fires on change") {
        auto d = table1_schema(TypeDescriptor::scalar(TypeCode::string));
        auto pv = ProcessVariable::create("s", d, {}, {100.0, 100.0});
        CHECK(pv->post(Value::container({{"value", "a"}})).fired_kind(value_change_default));
        CHECK_FALSE(pv->post(Value::container({{"value", "a"}})).fired_kind(value_change_default));
        CHECK(pv->post(Value::container({{"value", "b"}})).fired_kind(value_change_archive));
    }
    SUBCASE("units-only post fires no built-in") {
        auto pv = ProcessVariable::create("a", table1_schema());
        pv->register_event_kind("units_changed", [](const Value& a, const Value& b) {
            return *a.find(PropertyPath::parse("units")) != *b.find(PropertyPath::parse("units"));
        });
        pv->post(val(1));
        auto r = pv->post(Value::container({{"units", "mm"}}));
        CHECK(r.committed);
        CHECK(r.fired == std::vector<std::string>{"units_changed"});
    }
    SUBCASE("negative band rejected") {
        auto pv = ProcessVariable::create("a", table1_schema());
        CHECK_THROWS_AS(pv->set_dead_band(-1), Error);
        pv->set_archive_dead_band(2);
        CHECK(pv->archive_dead_band() == 2);
    }
}

TEST_CASE("post validation") {
    auto pv = ProcessVariable::create("a", table1_schema());
    pv->post(val(1.0), 10);
    auto before = pv->state();

    auto expect = [&](const Value& update, ErrorCode code) {
        try {
            pv->post(update);
            FAIL("accepted");
        } catch (const Error& e) {
            CHECK(e.code() == code);
        }
        CHECK(pv->seq() == 1);
        CHECK(pv->state() == before);
    };
    expect(Value::container({{"value", "text"}}), ErrorCode::type_mismatch);
    expect(Value::container({{"value", 2.0}, {"units", 3.0}}), ErrorCode::type_mismatch);
    expect(Value::container({{"valu", 2.0}}), ErrorCode::absent_path);
    expect(Value::container({{"display_limits", Value::container({{"lo", 1.0}})}}), ErrorCode::absent_path);
    expect(Value::container({{"name", "other"}}), ErrorCode::access);
    expect(Value::container({{"alarm_ack_transient", true}}), ErrorCode::access);
    expect(Value(1.0), ErrorCode::type_mismatch);

    SUBCASE("coercion on request") {
        auto r = pv->post(Value::container({{"value", std::int32_t{4}}}), 11, CopyPolicy::Coercion::allow);
        CHECK(r.committed);
        CHECK(pv->state().find(PropertyPath::parse("value"))->get<double>() == 4.0);
    }
    SUBCASE("time stamp") {
        pv->post(val(2.0), 12345);
        CHECK(pv->state().find(PropertyPath::parse("time_stamp"))->get<std::int64_t>() == 12345);
        pv->post(Value::container({{"value", 3.0}, {"time_stamp", std::int64_t{99}}}), 12346);
        CHECK(pv->state().find(PropertyPath::parse("time_stamp"))->get<std::int64_t>() == 99);
    }
    SUBCASE("nested partial update keeps siblings") {
        pv->post(Value::container({{"display_limits", Value::container({{"low", -1.0}, {"high", 1.0}})}}));
        pv->post(Value::container({{"display_limits", Value::container({{"high", 5.0}})}}));
        auto s = pv->state();
        CHECK(s.find(PropertyPath::parse("display_limits.low"))->get<double>() == -1.0);
        CHECK(s.find(PropertyPath::parse("display_limits.high"))->get<double>() == 5.0);
    }
}

TEST_CASE("alarms") {
    auto pv = ProcessVariable::create("a", table1_schema());
    auto r = pv->set_alarm(Severity::major, 3, "high");
    CHECK(r.committed);
    CHECK(r.fired == std::vector<std::string>{"alarm_change"});
    CHECK(pv->seq() == 1);
    CHECK_FALSE(pv->set_alarm(Severity::major, 3, "other text").committed);
    CHECK(pv->seq() == 1);
    CHECK(pv->set_alarm(Severity::major, 4).fired_kind(alarm_change));
    CHECK(pv->set_alarm(Severity::minor, 4).fired_kind(alarm_change));
    auto a = pv->alarm();
    CHECK(a.ack_severity == Severity::major);
    CHECK(a.ack_transient);
    CHECK(a.severity == Severity::minor);
    CHECK_FALSE(pv->acknowledge(Severity::minor).committed);
    CHECK(pv->acknowledge(Severity::major).committed);
    CHECK(pv->alarm().ack_severity == Severity::none);
    CHECK_FALSE(pv->alarm().ack_transient);
}

TEST_CASE("alarm acknowledge oracle") {
    std::mt19937 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        auto pv = ProcessVariable::create("a", table1_schema());
        int cur_sev = 0, cur_cond = 0, latched = 0;
        std::uint64_t seq = 0;
        for (int step = 0; step < 60; ++step) {
            int sev = static_cast<int>(rng() % 4);
            if (rng() % 4 == 0) {
                bool expect_commit = latched > 0 && sev >= latched;
                auto r = pv->acknowledge(static_cast<Severity>(sev));
                CHECK(r.committed == expect_commit);
                CHECK(r.fired.empty());
                if (expect_commit) {
                    latched = 0;
                    ++seq;
                }
            } else {
                int cond = static_cast<int>(rng() % 3);
                bool change = sev != cur_sev || cond != cur_cond;
                auto r = pv->set_alarm(static_cast<Severity>(sev), static_cast<std::uint16_t>(cond));
                CHECK(r.committed == change);
                CHECK(r.fired_kind(alarm_change) == change);
                if (change) {
                    cur_sev = sev;
                    cur_cond = cond;
                    latched = std::max(latched, sev);
                    ++seq;
                }
            }
            auto a = pv->alarm();
            CHECK(static_cast<int>(a.severity) == cur_sev);
            CHECK(static_cast<int>(a.ack_severity) == latched);
            CHECK(a.ack_transient == (latched > cur_sev));
            CHECK(pv->seq() == seq);
        }
    }
}

TEST_CASE("registered event kinds") {
    SUBCASE("beam_trip fires on downward crossings") {
        auto pv = ProcessVariable::create("beam", table1_schema());
        pv->register_event_kind("beam_trip", [](const Value& prev, const Value& cur) {
            double a = *prev.find(PropertyPath::parse("value"))->to_f64();
            double b = *cur.find(PropertyPath::parse("value"))->to_f64();
            return a >= 0 && b < 0;
        });
        std::vector<double> s{5, 3, -1, -2, 4, -0.5, 0, -3, 2};
        std::vector<std::size_t> expected{2, 5, 7};
        CHECK(fired_at(*pv, s, "beam_trip") == expected);
    }
    SUBCASE("collisions") {
        Database db;
        auto a = db.add("a", table1_schema());
        auto b = db.add("b", table1_schema());
        CHECK_THROWS_AS(a->register_event_kind("alarm_change", [](auto&, auto&) { return true; }), Error);
        a->register_event_kind("custom", [](auto&, auto&) { return true; });
        CHECK_THROWS_AS(a->register_event_kind("custom", [](auto&, auto&) { return true; }), Error);
        CHECK_THROWS_AS(db.register_event_kind("custom", [](auto&, auto&) { return true; }), Error);
        CHECK_FALSE(b->has_event_kind("custom"));
        db.register_event_kind("node_wide", [](auto&, auto&) { return true; });
        CHECK(a->has_event_kind("node_wide"));
        CHECK(b->has_event_kind("node_wide"));
        CHECK_THROWS_AS(b->register_event_kind("node_wide", [](auto&, auto&) { return true; }), Error);
        CHECK(b->post(val(1)).fired_kind("node_wide"));
        CHECK(a->event_kinds().size() == 5);
        try {
            a->register_event_kind("alarm_change", [](auto&, auto&) { return true; });
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::duplicate_name);
        }
    }
    SUBCASE("every_update fires on every post") {
        auto pv = ProcessVariable::create("p", table1_schema(), {}, {1000, 1000});
        pv->register_event_kind("every_update", [](auto&, auto&) { return true; });
        for (int i = 0; i < 20; ++i) CHECK(pv->post(val(0)).fired_kind("every_update"));
        CHECK(pv->set_alarm(Severity::minor, 1).fired_kind("every_update"));
    }
    SUBCASE("registration leaves built-in decisions unchanged") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> u(-10, 10);
        std::vector<Value> stream;
        for (int i = 0; i < 1000; ++i) {
            switch (rng() % 3) {
            case 0: stream.push_back(val(u(rng))); break;
            case 1: stream.push_back(Value::container({{"units", std::to_string(rng() % 3)}})); break;
            default: stream.push_back(Value::container({{"value", u(rng)}, {"precision", std::int16_t(rng() % 4)}}));
            }
        }
        auto builtin_sets = [&](bool with_kind) {
            auto pv = ProcessVariable::create("p", table1_schema(), {}, {3, 6});
            if (with_kind) pv->register_event_kind("up", [](const Value& a, const Value& b) {
                return *b.find(PropertyPath::parse("value"))->to_f64() > *a.find(PropertyPath::parse("value"))->to_f64();
            });
            std::vector<std::vector<std::string>> out;
            for (const auto& v : stream) {
                auto r = pv->post(v, 1);
                std::erase_if(r.fired, [](const std::string& k) { return !is_builtin_event(k); });
                out.push_back(r.fired);
            }
            return out;
        };
        CHECK(builtin_sets(false) == builtin_sets(true));
    }
}

TEST_CASE("composites") {
    auto d = table1_schema(f64(), {{"ra", f64(), {}}, {"dec", f64(), {}}});
    auto pv = ProcessVariable::create("telescope", d);
    CHECK_THROWS_AS(pv->apply_composite(Value::container({})), Error);
    auto r = pv->apply_composite(Value::container({{"ra", 1.25}, {"dec", -0.5}}));
    CHECK(r.committed);
    CHECK(pv->seq() == 1);
    std::vector<PropertyPath> sel{PropertyPath::parse("ra"), PropertyPath::parse("dec")};
    auto [seq, proj] = pv->read(sel);
    CHECK(seq == 1);
    CHECK(proj.value == Value::container({{"ra", 1.25}, {"dec", -0.5}}));
    CHECK_THROWS_AS(pv->apply_composite(Value::container({{"ra", 2.0}, {"dec", "x"}})), Error);
    CHECK(pv->read(sel).second.value == proj.value);
    CHECK(pv->seq() == 1);
}

TEST_CASE("composite indivisibility under concurrency") {
    Database db;
    auto d = table1_schema(f64(), {{"a", i64(), {}}, {"b", i64(), {}}});
    auto pv = db.add("pair", d);
    auto stream = db.subscribe_commits();
    std::vector<PropertyPath> sel{PropertyPath::parse("a"), PropertyPath::parse("b")};
    SnapshotSpec spec{"pair", "value_change_default", {{"pair", sel[0]}, {"pair", sel[1]}}};

    constexpr int per_writer = 20000;
    std::atomic<bool> done{false};
    std::atomic<long> observations{0}, violations{0};
    auto writer = [&](std::int64_t base) {
        for (std::int64_t k = 0; k < per_writer; ++k) {
            auto v = base + k;
            pv->apply_composite(Value::container({{"a", v}, {"b", v}}));
        }
    };
    auto reader = [&] {
        for (long reads = 0; !done || reads < 30000; ++reads) {
            auto [seq, p] = pv->read(sel);
            auto& c = p.value.as_container();
            if (c.fields[0].value != c.fields[1].value) ++violations;
            auto snap = db.snapshot(spec);
            auto& s = snap.members.value.as_container();
            if (s.fields[0].value != s.fields[1].value) ++violations;
            observations += 2;
        }
    };
    std::uint64_t last_seq = 0;
    std::set<std::uint64_t> node_seqs;
    auto consumer = [&] {
        while (auto e = stream->pop(std::chrono::milliseconds(500))) {
            auto& c = e->state.as_container();
            if (*c.find("a") != *c.find("b")) ++violations;
            if (e->pv_seq != last_seq + 1) ++violations;
            last_seq = e->pv_seq;
            if (!node_seqs.insert(e->node_seq).second) ++violations;
            ++observations;
        }
    };
    std::thread w1(writer, 0), w2(writer, 1'000'000), r1(reader), c1(consumer);
    w1.join();
    w2.join();
    done = true;
    r1.join();
    c1.join();
    CHECK(violations == 0);
    CHECK(observations >= 100000);
    CHECK(pv->seq() == 2 * per_writer);
    CHECK(last_seq == 2 * per_writer);
}

TEST_CASE("snapshots") {
    Database db;
    for (auto n : {"s1", "s2", "s3"}) db.add(n, table1_schema());
    auto pulse = db.add("pulse", table1_schema());
    CHECK_THROWS_AS(db.add("s1", table1_schema()), Error);

    SnapshotSpec spec;
    for (auto n : {"s1", "s2", "s3"})
        for (auto p : {"value", "time_stamp"}) spec.members.push_back({n, PropertyPath::parse(p)});

    SUBCASE("naming") {
        auto snap = db.snapshot(spec);
        auto& f = snap.members.value.as_container().fields;
        REQUIRE(f.size() == 6);
        CHECK(f[0].name == "s1_value");
        CHECK(f[1].name == "s1_time_stamp");
        CHECK(f[5].name == "s3_time_stamp");
        CHECK(conforms(snap.members.value, *snap.members.descriptor));
        CHECK(snap.seq_tag == db.node_seq());
    }
    SUBCASE("errors") {
        auto bad = spec;
        bad.members.push_back({"s1", PropertyPath::parse("nope")});
        CHECK_THROWS_AS(db.snapshot(bad), Error);
        bad.members.back() = {"zz", PropertyPath::parse("value")};
        CHECK_THROWS_AS(db.snapshot(bad), Error);
        CHECK_THROWS_AS(db.snapshot(SnapshotSpec{}), Error);
        bad = spec;
        bad.trigger_pv = "pulse";
        bad.trigger_event = "no_such_kind";
        CHECK_THROWS_AS(db.add_snapshot_trigger(bad), Error);
    }
    SUBCASE("trigger captures inside the commit") {
        pulse->register_event_kind("every_update", [](auto&, auto&) { return true; });
        spec.trigger_pv = "pulse";
        spec.trigger_event = "every_update";
        auto id = db.add_snapshot_trigger(spec);
        auto q = db.subscribe_commits();
        db.get("s2")->post(val(7), 70);
        pulse->post(val(1));
        auto events = q->drain();
        REQUIRE(events.size() == 2);
        CHECK(events[0].snapshots.empty());
        REQUIRE(events[1].snapshots.size() == 1);
        const auto& cap = events[1].snapshots[0];
        CHECK(cap.trigger_id == id);
        CHECK(cap.snapshot.seq_tag == events[1].node_seq);
        CHECK(cap.snapshot.seq_tag == db.node_seq());
        CHECK(*cap.snapshot.members.value.as_container().find("s2_value") == Value(7.0));
        CHECK(*cap.snapshot.members.value.as_container().find("s2_time_stamp") == Value(std::int64_t{70}));
        db.remove_snapshot_trigger(id);
        pulse->post(val(2));
        CHECK(q->drain().at(0).snapshots.empty());
    }
    SUBCASE("group composites are never split") {
        pulse->register_event_kind("every_update", [](auto&, auto&) { return true; });
        spec.trigger_pv = "pulse";
        spec.trigger_event = "every_update";
        db.add_snapshot_trigger(spec);
        auto q = db.subscribe_commits();
        std::atomic<bool> done{false};
        std::thread writer([&] {
            for (int k = 1; k <= 3000; ++k) {
                double v = k;
                db.group_composite({{"s1", val(v)}, {"s2", val(v)}, {"s3", val(v)}}, k);
            }
            done = true;
        });
        long captures = 0, bad = 0;
        int pulses = 0;
        while (!done || pulses < 200) {
            pulse->post(val(pulses++));
            for (auto& e : q->drain())
                for (auto& c : e.snapshots) {
                    ++captures;
                    auto& m = c.snapshot.members.value.as_container();
                    auto v = *m.find("s1_value");
                    if (*m.find("s2_value") != v || *m.find("s3_value") != v) ++bad;
                    if (*m.find("s1_time_stamp") != *m.find("s3_time_stamp")) ++bad;
                }
        }
        writer.join();
        CHECK(bad == 0);
        CHECK(captures == pulses);
    }
    SUBCASE("group composite is all or nothing") {
        auto before = db.node_seq();
        CHECK_THROWS_AS(db.group_composite({{"s1", val(1)}, {"s2", Value::container({{"value", "x"}})}}), Error);
        CHECK(db.node_seq() == before);
        CHECK(db.get("s1")->seq() == 0);
        CHECK_THROWS_AS(db.group_composite({{"s1", val(1)}, {"s1", val(2)}}), Error);
        CHECK_THROWS_AS(db.group_composite({{"s1", val(1)}, {"zz", val(2)}}), Error);
        auto rs = db.group_composite({{"s1", val(1)}, {"s2", val(1)}});
        CHECK(rs.size() == 2);
        CHECK(db.node_seq() == before + 1);
        CHECK(db.get("s1")->seq() == 1);
    }
}

TEST_CASE("sequence atomicity across threads") {
    Database db;
    auto q = db.subscribe_commits();
    std::vector<std::shared_ptr<ProcessVariable>> pvs;
    for (int i = 0; i < 4; ++i) pvs.push_back(db.add("p" + std::to_string(i), table1_schema()));
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t)
        threads.emplace_back([&, t] {
            std::mt19937 rng(t);
            for (int i = 0; i < 2000; ++i) pvs[rng() % 4]->post(val(i));
        });
    for (auto& t : threads) t.join();
    auto events = q->drain();
    CHECK(events.size() == 8000);
    std::map<std::string, std::uint64_t> last;
    std::set<std::uint64_t> node;
    bool ok = true;
    for (auto& e : events) {
        ok = ok && e.pv_seq == last[e.pv] + 1;
        last[e.pv] = e.pv_seq;
        ok = ok && node.insert(e.node_seq).second;
    }
    CHECK(ok);
    CHECK(db.node_seq() == 8000);
    CHECK(LockAudit::violations() == 0);
}
