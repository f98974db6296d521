// SPDX-License-Identifier: Apache-2.0
// Runs the ten acceptance criteria and prints one PASS/FAIL line for each.

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <csignal>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "demos.hpp"
#include "json.hpp"
#include "pw/detail/lock_audit.hpp"
#include "pw/wire.hpp"
#include "scenarios.hpp"
#include "support/conversion_grid.hpp"
#include "support/conversion_oracle.hpp"
#include "support/generators.hpp"
#include "support/projection_oracle.hpp"

extern char** environ;

using namespace pw;
using namespace std::chrono_literals;
using scn::Transport;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(int n, std::string_view title, const std::function<Outcome()>& body) {
    Outcome o;
    auto t0 = Clock::now();
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (!o.pass) ++failures;
    std::printf("%s criterion %d (%s): %s [%.2fs]\n", o.pass ? "PASS" : "FAIL", n, std::string(title).c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---- child processes

struct Child {
    pid_t pid = -1;
    int out = -1;
};

Child spawn(const std::string& tool, const std::vector<std::string>& args) {
    std::string path = std::string(PW_TOOL_DIR) + "/" + tool;
    std::vector<char*> argv{const_cast<char*>(path.c_str())};
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    int fds[2];
    if (::pipe(fds) != 0) throw std::runtime_error("pipe failed");
    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_adddup2(&fa, fds[1], 1);
    posix_spawn_file_actions_addclose(&fa, fds[0]);
    posix_spawn_file_actions_addclose(&fa, fds[1]);
    Child c;
    int rc = posix_spawn(&c.pid, path.c_str(), &fa, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&fa);
    ::close(fds[1]);
    if (rc != 0) {
        ::close(fds[0]);
        throw std::runtime_error("cannot start " + path);
    }
    c.out = fds[0];
    return c;
}

std::string read_line(int fd) {
    std::string line;
    char ch;
    while (::read(fd, &ch, 1) == 1 && ch != '\n') line += ch;
    return line;
}

std::string read_all(int fd) {
    std::string out;
    char buf[4096];
    for (ssize_t n; (n = ::read(fd, buf, sizeof buf)) > 0;) out.append(buf, static_cast<std::size_t>(n));
    return out;
}

/// Exit status, or -1 when the child had to be killed.
int wait_exit(pid_t pid, std::chrono::milliseconds timeout) {
    auto deadline = Clock::now() + timeout;
    int status = 0;
    while (Clock::now() < deadline) {
        if (::waitpid(pid, &status, WNOHANG) == pid) return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        std::this_thread::sleep_for(10ms);
    }
    ::kill(pid, SIGKILL);
    ::waitpid(pid, &status, 0);
    return -1;
}

struct Captured {
    int rc = -1;
    std::vector<std::string> lines;
};

Captured finish(Child c, std::chrono::milliseconds timeout) {
    // Read on a side thread so a stuck child cannot block the runner.
    std::string text;
    std::thread reader([&] { text = read_all(c.out); });
    Captured out;
    out.rc = wait_exit(c.pid, timeout);
    reader.join();
    ::close(c.out);
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);)
        if (!l.empty()) out.lines.push_back(l);
    return out;
}

// ---- criteria

Outcome codec_roundtrip() {
    auto t0 = Clock::now();
    testing::Generator gen(2026, testing::GenLimits{5, 8, 4, 5});
    std::size_t pairs = 0, mismatches = 0, max_depth = 0;
    for (int i = 0; i < 1200; ++i) {
        auto d = gen.container_descriptor();
        max_depth = std::max(max_depth, descriptor_depth(*d));
        auto back = wire::decode_descriptor(wire::encode_descriptor(*d));
        if (!(*back == *d)) ++mismatches;
        auto v = gen.value_for(*d);
        auto bytes = wire::encode_value(v, *d);
        auto w = wire::decode_value(bytes, *back);
        if (!testing::same_value(v, w) || wire::encode_value(w, *d) != bytes) ++mismatches;
        ++pairs;
    }

    testing::Generator fuzz_gen(7);
    std::mt19937 rng(11);
    std::size_t mutants = 0, rejected = 0, silent = 0;
    for (int i = 0; i < 400; ++i) {
        auto d = fuzz_gen.container_descriptor();
        auto vb = wire::encode_value(fuzz_gen.value_for(*d), *d);
        auto db = wire::encode_descriptor(*d);
        for (int m = 0; m < 25; ++m) {
            if (!vb.empty()) {
                auto mutated = vb;
                mutated[rng() % mutated.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);
                ++mutants;
                try {
                    if (!conforms(wire::decode_value(mutated, *d), *d)) ++silent;
                } catch (const DecodeError&) {
                    ++rejected;
                }
            }
            auto mutated = db;
            mutated[rng() % mutated.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);
            ++mutants;
            try {
                if (!validate_descriptor(*wire::decode_descriptor(mutated)).empty()) ++silent;
            } catch (const DecodeError&) {
                ++rejected;
            }
        }
    }
    double secs = seconds_since(t0);
    std::ostringstream os;
    os << pairs << " pairs (depth <= " << max_depth << "), " << mismatches << " mismatches; " << mutants
       << " mutants, " << rejected << " rejected, " << silent << " non-conforming; " << secs << " s";
    return {pairs >= 1000 && max_depth <= 5 && mismatches == 0 && silent == 0 && secs < 10, os.str()};
}

Outcome conversion_oracle() {
    auto grid = testing::conversion_grid();
    auto targets = testing::conversion_targets();
    std::map<std::pair<int, int>, bool> cells;
    std::size_t checks = 0, disagreements = 0;
    for (const auto& s : grid) {
        for (const auto& t : targets) {
            auto expected = testing::oracle_convert(s.value, *s.type, *t);
            ErrorCode err = ErrorCode::ok;
            std::optional<ConversionResult> got;
            try {
                got = convert(s.value, *s.type, *t);
            } catch (const Error& e) {
                err = e.code();
            }
            bool same = err == expected.error;
            if (same && got)
                same = testing::same_value(got->value, *expected.value) && got->detail == expected.detail &&
                       got->lossy == (expected.detail == ConversionDetail::rounded ||
                                      expected.detail == ConversionDetail::clamped);
            if (!same) ++disagreements;
            cells[{static_cast<int>(s.type->code()), static_cast<int>(t->code())}] = true;
            ++checks;
        }
    }
    std::ostringstream os;
    os << cells.size() << " kind pairs, " << grid.size() << " grid values, " << checks << " conversions, "
       << disagreements << " disagreements";
    return {cells.size() == 15 * 15 && disagreements == 0, os.str()};
}

struct NodeRuns {
    std::map<Transport, bool> ramp, atomicity, snapshots, resilience;
};
NodeRuns node;

Outcome deadband() {
    std::ostringstream os;
    bool pass = true;
    for (auto t : scn::transports) {
        auto r = scn::ramp(t);
        bool ok = r.oracle == 17 && r.deliveries == 17 && r.delivered_values == r.oracle_values;
        node.ramp[t] = ok;
        pass &= ok;
        os << scn::name(t) << " in-process " << r.deliveries << "/" << r.oracle << "; ";
    }

    // End to end through separate pv-serve and pv-monitor processes.
    auto conf = std::filesystem::temp_directory_path() / ("pw-ramp-" + std::to_string(::getpid()) + ".conf");
    {
        std::ofstream f(conf);
        f << "pv temp {\n  deadband 5\n}\n";
        for (int i = 0; i <= 100; ++i) f << "at " << 1500 + 2 * i << " post temp value " << i << "\n";
    }
    auto server = spawn("pv-serve", {"--config", conf.string(), "--listen", "127.0.0.1:0"});
    std::string first = read_line(server.out);
    if (first.rfind("listening ", 0) != 0) {
        ::kill(server.pid, SIGKILL);
        wait_exit(server.pid, 1s);
        return {false, "pv-serve did not start: " + first};
    }
    std::string addr = first.substr(10);
    auto counted = spawn("pv-monitor", {"--addr", addr, "temp", "--events", "value_change_default", "--no-initial",
                                        "--count", "17", "--json"});
    auto plain = spawn("pv-monitor", {"--addr", addr, "temp", "--events", "value_change_default", "--count", "17"});
    auto timed = spawn("pv-monitor", {"--addr", addr, "temp", "--no-initial", "--timeout", "4000"});
    auto a = finish(counted, 10s);
    auto b = finish(plain, 10s);
    auto c = finish(timed, 10s);
    ::kill(server.pid, SIGTERM);
    int serve_rc = wait_exit(server.pid, 5s);
    ::close(server.out);
    std::filesystem::remove(conf);

    std::vector<double> expected;
    for (auto i : scn::deadband_oracle([] {
             std::vector<double> v;
             for (int i = 0; i <= 100; ++i) v.push_back(i);
             return v;
         }(),
                                       5.0))
        expected.push_back(static_cast<double>(i));
    std::vector<double> seen;
    for (const auto& l : a.lines) seen.push_back(nlohmann::json::parse(l)["values"]["value"].get<double>());
    bool procs = a.rc == 0 && a.lines.size() == 17 && seen == expected && b.rc == 0 && b.lines.size() == 17 &&
                 c.rc == 0 && c.lines.size() == expected.size() && serve_rc == 0;
    node.ramp[Transport::tcp] = node.ramp[Transport::tcp] && procs;
    pass &= procs && expected.size() == 17;
    os << "oracle " << expected.size() << ", pv-monitor --count 17 printed " << a.lines.size() << " (rc " << a.rc
       << "), unbounded monitor saw " << c.lines.size() << " (rc " << c.rc << ")";
    return {pass, os.str()};
}

Outcome atomicity() {
    std::ostringstream os;
    bool pass = true;
    for (auto t : scn::transports) {
        auto r = scn::composite_atomicity(t, 2, 1000);
        bool ok = r.mixed == 0 && r.deliveries >= 2000 && r.seq_sets_equal && r.seconds < 30;
        node.atomicity[t] = ok;
        pass &= ok;
        os << scn::name(t) << ": " << r.deliveries << " deliveries, " << r.mixed << " mixed, "
           << (r.seq_sets_equal ? "seqs match" : "SEQS DIFFER") << ", " << r.seconds << " s; ";
    }
    return {pass, os.str()};
}

Outcome snapshots() {
    std::ostringstream os;
    bool pass = true;
    for (auto t : scn::transports) {
        auto spool = std::filesystem::temp_directory_path() /
                     ("pw-archive-" + std::to_string(::getpid()) + "-" + std::string(scn::name(t)) + ".jsonl");
        auto server = Server::start(demo::demo_config("archiver"), scn::fresh_address(t));
        demo::Options o;
        o.spool = spool.string();
        o.pulses = 100;
        o.period = 2ms;
        auto d = demo::start("archiver", *server, o);
        bool finished = d->wait_done(30s);
        auto log = demo::archive_log(*d);
        d->stop();
        server->stop();
        auto check = demo::check_archive(spool.string(), log);
        std::filesystem::remove(spool);

        auto s = scn::snapshot_coherence(t, 100);
        bool ok = finished && check.lines == 100 && check.coherent() && s.deliveries == 100 && s.incoherent == 0 &&
                  s.unmatched == 0 && s.tags_increasing;
        node.snapshots[t] = ok;
        pass &= ok;
        os << scn::name(t) << ": archiver " << check.lines << " lines (" << check.incoherent << " incoherent, "
           << check.unmatched << " unmatched), writer run " << s.deliveries << " deliveries (" << s.incoherent
           << " incoherent); ";
    }
    return {pass, os.str()};
}

Outcome extraction() {
    testing::Generator gen(606);
    std::size_t pairs = 0, project_bad = 0, copy_bad = 0;
    while (pairs < 500) {
        auto d = gen.container_descriptor();
        GenericSource src(d, gen.value_for(*d));
        auto all = traverse_paths(src);
        if (all.empty()) continue;
        auto sel = testing::random_selection(gen, all);
        auto got = project(src, sel);
        auto expected = testing::oracle_project(src, sel);
        if (!expected || !testing::same_value(got.value, *expected) || !conforms(got.value, *got.descriptor))
            ++project_bad;

        auto dd = testing::derived_descriptor(gen, d);
        GenericSource dst(dd, gen.value_for(*dd));
        auto want = testing::oracle_copy(src, dst);
        copy_into(src, dst);
        if (!testing::same_value(dst.value(), want)) ++copy_bad;
        ++pairs;
    }
    std::ostringstream os;
    os << pairs << " pairs, " << project_bad << " project mismatches, " << copy_bad << " copy_into mismatches";
    return {pairs == 500 && project_bad == 0 && copy_bad == 0, os.str()};
}

Outcome sharing() {
    Database db;
    auto schema = table1_schema(TypeDescriptor::scalar(TypeCode::f64),
                                {{"gain", TypeDescriptor::scalar(TypeCode::f32), {}}});
    std::set<const TypeDescriptor*> instances;
    std::set<std::uint32_t> ids;
    auto& pool = DescriptorPool::global();
    for (int i = 0; i < 10000; ++i) {
        auto pv = db.add("pv" + std::to_string(i), schema);
        instances.insert(pv->schema().get());
        ids.insert(pool.id_of(pv->schema()));
    }
    std::ostringstream os;
    os << db.size() << " PVs, " << instances.size() << " descriptor instance(s), " << ids.size() << " id(s); ";
    bool pass = db.size() == 10000 && instances.size() == 1 && ids.size() == 1;
    for (auto t : scn::transports) {
        auto e = scn::registry_economy(t, 100);
        pass &= e.events == 100 && e.descriptor_occurrences == 1 && e.type_regs == 1;
        os << scn::name(t) << ": " << e.events << " updates, descriptor bytes sent " << e.descriptor_occurrences
           << "x, " << e.type_regs << " TYPE_REG; ";
    }
    return {pass, os.str()};
}

Outcome resilience() {
    std::ostringstream os;
    bool pass = true;
    for (auto t : scn::transports) {
        auto r = scn::resilience(t);
        bool ok = r.down_up_down_up && r.inflight_code == ErrorCode::disconnected && r.inflight_error_ms >= 0 &&
                  r.inflight_error_ms <= 2 * r.heartbeat_ms && r.resumed_after_partition && r.resumed_after_restart &&
                  r.restart_value == 42.0 && r.cycle_seconds < 5.0;
        node.resilience[t] = ok;
        pass &= ok;
        os << scn::name(t) << ": in-flight error after " << r.inflight_error_ms << " ms (heartbeat "
           << r.heartbeat_ms << " ms), states ";
        for (auto s : r.states) os << to_string(s) << ",";
        os << " resumed " << (r.resumed_after_restart ? "yes" : "no") << ", cycle " << r.cycle_seconds << " s; ";
    }
    return {pass, os.str()};
}

Outcome equivalence() {
    std::ostringstream os;
    bool pass = true;
    for (auto t : scn::transports) {
        bool ok = node.ramp[t] && node.atomicity[t] && node.snapshots[t] && node.resilience[t];
        pass &= ok;
        os << scn::name(t) << ": 3 " << (node.ramp[t] ? "ok" : "fail") << ", 4 "
           << (node.atomicity[t] ? "ok" : "fail") << ", 5 " << (node.snapshots[t] ? "ok" : "fail") << ", 8 "
           << (node.resilience[t] ? "ok" : "fail") << "; ";
    }
    return {pass, os.str()};
}

Outcome deadlock_freedom() {
    std::ostringstream os;
    bool pass = true;
    for (auto t : scn::transports) {
        auto r = scn::reentrant(t);
        bool ok = r.completed && r.get_ok && r.put_ok && r.monitor_ok && r.nested_delivery;
        pass &= ok;
        os << scn::name(t) << ": reentrant get/put/monitor " << (ok ? "completed" : "FAILED") << "; ";
    }
    auto callbacks = LockAudit::callbacks();
    auto violations = LockAudit::violations();
    pass &= callbacks > 0 && violations == 0;
    os << callbacks << " user callbacks audited, " << violations << " under a library lock";
    return {pass, os.str()};
}

} // namespace

int main() {
    report(1, "codec roundtrip", codec_roundtrip);
    report(2, "conversion oracle", conversion_oracle);
    report(3, "dead-band event count", deadband);
    report(4, "composite atomicity", atomicity);
    report(5, "snapshot coherence", snapshots);
    report(6, "subset extraction", extraction);
    report(7, "descriptor sharing", sharing);
    report(8, "resilience", resilience);
    report(9, "transport equivalence", equivalence);
    report(10, "deadlock freedom", deadlock_freedom);
    std::printf("%d of 10 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
