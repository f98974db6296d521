// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <ctime>
#include <deque>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "pw/client.hpp"
#include "pw/literal.hpp"
#include "pw/server.hpp"

namespace pw::cli {

using json = nlohmann::ordered_json;
using namespace std::chrono_literals;
using Clock = std::chrono::steady_clock;

int exit_code(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::ok: return ok;
    case ErrorCode::parse:
    case ErrorCode::path_syntax:
    case ErrorCode::config: return usage;
    case ErrorCode::absent_path:
    case ErrorCode::unknown_pv:
    case ErrorCode::unknown_event:
    case ErrorCode::invalid_argument:
    case ErrorCode::duplicate_name:
    case ErrorCode::access:
    case ErrorCode::handle_mismatch:
    case ErrorCode::invalid_descriptor: return semantic;
    case ErrorCode::disconnected:
    case ErrorCode::timeout:
    case ErrorCode::protocol:
    case ErrorCode::decode:
    case ErrorCode::transport:
    case ErrorCode::overflow: return transport;
    case ErrorCode::type_mismatch:
    case ErrorCode::range:
    case ErrorCode::kind:
    case ErrorCode::strict_copy: return mismatch;
    }
    return usage;
}

std::string iso8601(Timestamp ns) {
    std::int64_t secs = ns / 1'000'000'000;
    std::int64_t frac = ns % 1'000'000'000;
    if (frac < 0) {
        frac += 1'000'000'000;
        --secs;
    }
    std::time_t t = static_cast<std::time_t>(secs);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char head[32];
    std::strftime(head, sizeof head, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[48];
    std::snprintf(out, sizeof out, "%s.%09lldZ", head, static_cast<long long>(frac));
    return out;
}

void flatten(const DescriptorPtr& d, const Value& v, const std::string& prefix, std::vector<Leaf>& out) {
    if (d && d->code() == TypeCode::container && v.is<Container>()) {
        const auto& fields = v.as_container().fields;
        for (std::size_t i = 0; i < fields.size(); ++i) {
            const auto* fd = d->field(fields[i].name);
            std::string path = prefix.empty() ? fields[i].name : prefix + "." + fields[i].name;
            flatten(fd ? fd->type : nullptr, fields[i].value, path, out);
        }
        return;
    }
    out.push_back({prefix, d, v});
}

namespace {

json json_value(const TypeDescriptor* d, const Value& v) {
    return std::visit(
        [&](const auto& x) -> json {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, bool> || std::is_same_v<T, std::string>) {
                return x;
            } else if constexpr (std::is_same_v<T, float> || std::is_same_v<T, double>) {
                if (std::isfinite(x)) return static_cast<double>(x);
                return std::isnan(x) ? "nan" : (x > 0 ? "inf" : "-inf");
            } else if constexpr (std::is_integral_v<T>) {
                return x;
            } else if constexpr (std::is_same_v<T, EnumIndex>) {
                if (d && d->code() == TypeCode::enumerated && x.index < d->labels().size())
                    return d->labels()[x.index];
                return x.index;
            } else if constexpr (std::is_same_v<T, Array>) {
                const TypeDescriptor* el = d && d->element() ? d->element().get() : nullptr;
                json items = json::array();
                for (const auto& e : x.elements) items.push_back(json_value(el, e));
                if (x.rank() <= 1) return items;
                return json{{"extents", x.extents}, {"elements", std::move(items)}};
            } else {
                json obj = json::object();
                for (const auto& f : x.fields) {
                    const auto* fd = d ? d->field(f.name) : nullptr;
                    obj[f.name] = json_value(fd ? fd->type.get() : nullptr, f.value);
                }
                return obj;
            }
        },
        v.storage());
}

} // namespace

std::string to_text(const Record& r) {
    std::string out = "seq=" + std::to_string(r.seq) + " pv=" + r.pv + " event=" + r.event +
                      " timestamp=" + iso8601(r.timestamp);
    for (const auto& l : r.values) out += " " + l.path + "=" + format_literal(l.value, l.type.get());
    return out;
}

std::string to_json(const Record& r) {
    json values = json::object();
    for (const auto& l : r.values) values[l.path] = json_value(l.type.get(), l.value);
    json j;
    j["seq"] = r.seq;
    j["pv"] = r.pv;
    j["event"] = r.event;
    j["timestamp"] = iso8601(r.timestamp);
    j["values"] = std::move(values);
    return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

std::atomic<bool>& interrupted() noexcept {
    static std::atomic<bool> flag{false};
    return flag;
}

namespace {

struct Common {
    std::string addr;
    int timeout_ms = 2000;
    bool json = false;
    bool dump = false;

    void add_to(CLI::App& app, bool with_timeout = true) {
        app.add_option("--addr", addr, "Node address (default $PW_ADDR or " + std::string(default_address) + ")");
        if (with_timeout) app.add_option("--timeout", timeout_ms, "Milliseconds to wait for the node")->check(CLI::NonNegativeNumber);
        app.add_flag("--json", json, "One JSON object per line");
        app.add_flag("--dump", dump, "Print every frame to stderr");
    }

    std::string address() const {
        if (!addr.empty()) return addr;
        if (const char* env = std::getenv("PW_ADDR"); env && *env) return env;
        return std::string(default_address);
    }

    std::chrono::milliseconds wait() const { return std::chrono::milliseconds(timeout_ms > 0 ? timeout_ms : 2000); }

    void print(std::ostream& out, const Record& r) const { out << (json ? to_json(r) : to_text(r)) << std::endl; }
};

std::shared_ptr<Session> open_session(const Common& c, std::string_view tool, std::chrono::milliseconds wait,
                                      std::function<void(SessionState)> on_state = {}) {
    ClientOptions o;
    o.reconnect = false;
    o.connect_timeout = wait;
    o.dump_frames = c.dump;
    o.peer_name = std::string(tool);
    o.on_state = std::move(on_state);
    auto addr = c.address();
    auto s = Session::create(addr, o);
    if (!s->wait_up(wait + 500ms)) {
        s->close();
        throw Error(ErrorCode::transport, "cannot reach " + addr);
    }
    return s;
}

template <class T>
T await(const Pending<T>& p, std::chrono::milliseconds wait) {
    const Result<T>* r = p.wait_for(wait);
    if (!r) throw Error(ErrorCode::timeout, "no reply within " + std::to_string(wait.count()) + " ms");
    if (!r->ok()) throw Error(r->error().code, r->error().message);
    return r->value();
}

std::vector<PropertyPath> parse_paths(const std::vector<std::string>& texts) {
    std::vector<PropertyPath> out;
    for (const auto& t : texts) out.push_back(PropertyPath::parse(t));
    return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

Timestamp timestamp_of(const Value* v) {
    if (v && v->is<std::int64_t>()) return v->get<std::int64_t>();
    return 0;
}

/// Leaves of a projection whose fields correspond to `paths` by position.
/// Fields at `skip` are left out.
std::vector<Leaf> projected_leaves(const DescriptorPtr& d, const Value& v, const std::vector<PropertyPath>& paths,
                                   std::optional<std::size_t> skip = {}) {
    std::vector<Leaf> out;
    const auto& fields = v.as_container().fields;
    for (std::size_t i = 0; i < fields.size() && i < paths.size(); ++i) {
        if (skip && *skip == i) continue;
        flatten(d->fields()[i].type, fields[i].value, paths[i].to_string(), out);
    }
    return out;
}

/// Index of `time_stamp` in paths, appending it when missing.
std::size_t ensure_time_stamp(std::vector<PropertyPath>& paths) {
    auto ts = PropertyPath::parse("time_stamp");
    for (std::size_t i = 0; i < paths.size(); ++i)
        if (paths[i] == ts) return i;
    paths.push_back(ts);
    return paths.size() - 1;
}

template <class F>
int guarded(std::ostream& err, std::string_view tool, F&& body) {
    try {
        return body();
    } catch (const Error& e) {
        err << tool << ": " << to_string(e.code()) << ": " << e.what() << "\n";
        return exit_code(e.code());
    } catch (const std::exception& e) {
        err << tool << ": " << e.what() << "\n";
        return usage;
    }
}

int parse_args(CLI::App& app, int argc, const char* const* argv, std::ostream& out, std::ostream& err, bool& done) {
    done = false;
    try {
        app.parse(argc, argv);
        return ok;
    } catch (const CLI::ParseError& e) {
        done = true;
        int rc = app.exit(e, out, err);
        return rc == 0 ? ok : usage;
    }
}

std::string type_label(const TypeDescriptor& d) {
    std::ostringstream os;
    os << code_name(d.code()) << " (0x" << std::hex << std::uppercase << std::setw(2) << std::setfill('0')
       << static_cast<int>(d.code()) << ")";
    if (d.code() == TypeCode::enumerated) os << " {" << join(d.labels(), ",") << "}";
    if (d.code() == TypeCode::array) {
        os << " of " << (d.element() ? type_label(*d.element()) : "?") << ", rank ";
        if (d.declared_rank() == 0) os << "any";
        else os << std::dec << static_cast<int>(d.declared_rank());
    }
    return os.str();
}

void print_tree(std::ostream& out, const TypeDescriptor& d, int indent) {
    for (const auto& f : d.fields()) {
        out << std::string(indent * 2, ' ') << f.name << "  " << type_label(*f.type) << "\n";
        if (f.type->code() == TypeCode::container) print_tree(out, *f.type, indent + 1);
    }
}

json tree_json(const TypeDescriptor& d) {
    json j;
    j["type"] = code_name(d.code());
    j["code"] = static_cast<int>(d.code());
    if (d.code() == TypeCode::enumerated) j["labels"] = d.labels();
    if (d.code() == TypeCode::array) {
        j["rank"] = d.declared_rank();
        if (d.element()) j["element"] = tree_json(*d.element());
    }
    if (d.code() == TypeCode::container) {
        json fields = json::array();
        for (const auto& f : d.fields()) {
            json fj = tree_json(*f.type);
            fj["name"] = f.name;
            fields.push_back(std::move(fj));
        }
        j["fields"] = std::move(fields);
    }
    return j;
}

} // namespace

int pv_info(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Print the descriptor tree of a process variable", "pv-info"};
    Common c;
    c.add_to(app);
    std::vector<std::string> pos;
    app.add_option("args", pos, "[ADDR] PV")->required()->expected(1, 2);
    bool done;
    if (int rc = parse_args(app, argc, argv, out, err, done); done) return rc;
    if (pos.size() == 2) c.addr = pos[0];
    std::string pv = pos.back();
    return guarded(err, "pv-info", [&] {
        auto s = open_session(c, "pv-info", c.wait());
        Channel ch = await(s->open(pv), c.wait());
        if (c.json) {
            json j;
            j["pv"] = pv;
            j["schema"] = tree_json(*ch.schema());
            j["events"] = ch.event_kinds();
            out << j.dump() << std::endl;
        } else {
            out << pv << "  " << type_label(*ch.schema()) << "\n";
            print_tree(out, *ch.schema(), 1);
            out << "events  " << join(ch.event_kinds(), ",") << std::endl;
        }
        s->close();
        return ok;
    });
}

int pv_get(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Read a process variable", "pv-get"};
    Common c;
    c.add_to(app);
    std::string pv;
    std::vector<std::string> path_texts;
    app.add_option("pv", pv, "Process variable")->required();
    app.add_option("--paths", path_texts, "Properties to read")->delimiter(',');
    bool done;
    if (int rc = parse_args(app, argc, argv, out, err, done); done) return rc;
    return guarded(err, "pv-get", [&] {
        auto paths = parse_paths(path_texts);
        std::optional<std::size_t> ts_index;
        auto request = paths;
        if (!request.empty()) ts_index = ensure_time_stamp(request);
        bool ts_requested = ts_index && *ts_index < paths.size();
        auto s = open_session(c, "pv-get", c.wait());
        Channel ch = await(s->open(pv), c.wait());
        Reading r = await(ch.get(request), c.wait());
        Record rec{r.seq, pv, "get", 0, {}};
        if (request.empty()) {
            rec.timestamp = timestamp_of(r.value.find(PropertyPath::parse("time_stamp")));
            flatten(r.type, r.value, "", rec.values);
        } else {
            rec.timestamp = timestamp_of(&r.value.as_container().fields[*ts_index].value);
            rec.values = projected_leaves(r.type, r.value, request,
                                          ts_requested ? std::nullopt : ts_index);
        }
        c.print(out, rec);
        s->close();
        return ok;
    });
}

int pv_put(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Write properties of a process variable", "pv-put"};
    Common c;
    c.add_to(app);
    std::string pv;
    std::vector<std::string> pairs;
    bool composite = false;
    app.add_option("pv", pv, "Process variable")->required();
    app.add_option("assignments", pairs, "path=literal pairs")->required();
    app.add_flag("--composite", composite, "Commit every pair as one atomic update");
    bool done;
    if (int rc = parse_args(app, argc, argv, out, err, done); done) return rc;
    return guarded(err, "pv-put", [&] {
        std::vector<std::pair<PropertyPath, std::string>> assignments;
        for (const auto& p : pairs) {
            auto eq = p.find('=');
            if (eq == std::string::npos || eq == 0)
                throw Error(ErrorCode::parse, "expected path=literal, got '" + p + "'");
            assignments.emplace_back(PropertyPath::parse(p.substr(0, eq)), p.substr(eq + 1));
        }
        auto s = open_session(c, "pv-put", c.wait());
        Channel ch = await(s->open(pv), c.wait());
        const auto& schema = *ch.schema();
        std::vector<Value> parts;
        for (const auto& [path, lit] : assignments) parts.push_back(partial_update(schema, path, lit));

        auto report = [&](const CommitResult& r, const Value& written) {
            Record rec{r.seq, pv, r.committed ? (r.fired.empty() ? "put" : join(r.fired, ",")) : "unchanged",
                       now_ns(), {}};
            flatten(ch.schema(), written, "", rec.values);
            c.print(out, rec);
        };
        if (composite) {
            Value merged = Value::container({});
            for (const auto& p : parts) merge_partial(merged, p);
            report(await(ch.put_composite(merged), c.wait()), merged);
        } else {
            for (const auto& p : parts) report(await(ch.put(p), c.wait()), p);
        }
        s->close();
        return ok;
    });
}

namespace {

template <class T>
struct Inbox {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<Result<T>> items;

    void push(Result<T> r) {
        {
            std::lock_guard lock(mu);
            items.push_back(std::move(r));
        }
        cv.notify_one();
    }
};

/// Pops deliveries until `handle` returns false, the deadline passes or the
/// process is interrupted. Errors end the loop with their exit code.
template <class T, class F>
int drain(Inbox<T>& inbox, int timeout_ms, std::ostream& err, std::string_view tool, F&& handle) {
    auto deadline = timeout_ms > 0 ? Clock::now() + std::chrono::milliseconds(timeout_ms) : Clock::time_point::max();
    for (;;) {
        std::unique_lock lock(inbox.mu);
        auto until = std::min(deadline, Clock::now() + 50ms);
        inbox.cv.wait_until(lock, until, [&] { return !inbox.items.empty(); });
        if (interrupted()) return ok;
        if (inbox.items.empty()) {
            if (Clock::now() >= deadline) return ok;
            continue;
        }
        Result<T> r = std::move(inbox.items.front());
        inbox.items.pop_front();
        lock.unlock();
        if (!r.ok()) {
            err << tool << ": " << to_string(r.error().code) << ": " << r.error().message << "\n";
            return exit_code(r.error().code);
        }
        if (!handle(r.value())) return ok;
    }
}

} // namespace

int pv_monitor(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Stream updates of a process variable", "pv-monitor"};
    Common c;
    c.add_to(app, false);
    std::string pv;
    std::vector<std::string> path_texts;
    std::vector<std::string> events{std::string(value_change_default)};
    std::size_t count = 0;
    int timeout_ms = 0;
    std::size_t queue = 0;
    bool no_initial = false;
    app.add_option("pv", pv, "Process variable")->required();
    app.add_option("--paths", path_texts, "Properties to deliver")->delimiter(',');
    app.add_option("--events", events, "Event kinds")->delimiter(',');
    app.add_option("--count", count, "Exit after this many records (0 streams forever)");
    app.add_option("--timeout", timeout_ms, "Exit after this many milliseconds (0 waits forever)")
        ->check(CLI::NonNegativeNumber);
    app.add_option("--queue", queue, "Undelivered events kept before conflating (0 is unbounded)");
    app.add_flag("--no-initial", no_initial, "Skip the delivery of the current state");
    bool done;
    if (int rc = parse_args(app, argc, argv, out, err, done); done) return rc;
    return guarded(err, "pv-monitor", [&] {
        auto paths = parse_paths(path_texts);
        auto inbox = std::make_shared<Inbox<MonitorDelivery>>();
        auto s = open_session(c, "pv-monitor", c.wait(), [inbox](SessionState st) {
            if (st == SessionState::down) inbox->push(Failure{ErrorCode::disconnected, "connection lost"});
        });
        Channel ch = await(s->open(pv), c.wait());
        MonitorOptions mo;
        mo.events = events;
        mo.paths = paths;
        mo.queue_depth = queue;
        mo.initial = !no_initial;
        auto mon = await(ch.monitor(mo, [inbox](const Result<MonitorDelivery>& r) { inbox->push(r); }), c.wait());
        std::size_t printed = 0;
        int rc = drain(*inbox, timeout_ms, err, "pv-monitor", [&](const MonitorDelivery& d) {
            Record rec{d.seq, pv, d.initial ? "initial" : join(d.fired, ","), d.time_stamp, {}};
            if (paths.empty()) flatten(d.type, d.value, "", rec.values);
            else rec.values = projected_leaves(d.type, d.value, paths);
            c.print(out, rec);
            return count == 0 || ++printed < count;
        });
        mon->cancel();
        s->close();
        return rc;
    });
}

int pv_snapshot(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Capture properties of several PVs whenever a trigger event fires", "pv-snapshot"};
    Common c;
    c.add_to(app, false);
    std::string trigger;
    std::vector<std::string> member_texts;
    std::size_t count = 0;
    int timeout_ms = 0;
    bool initial = false;
    app.add_option("--trigger", trigger, "PV:EVENT that triggers a capture")->required();
    app.add_option("members", member_texts, "PV.PATH members; a bare PV means PV.value")->required();
    app.add_option("--count", count, "Exit after this many records (0 streams forever)");
    app.add_option("--timeout", timeout_ms, "Exit after this many milliseconds (0 waits forever)")
        ->check(CLI::NonNegativeNumber);
    app.add_flag("--initial", initial, "Also deliver the current member state");
    bool done;
    if (int rc = parse_args(app, argc, argv, out, err, done); done) return rc;
    return guarded(err, "pv-snapshot", [&] {
        auto colon = trigger.find(':');
        if (colon == std::string::npos || colon == 0 || colon + 1 == trigger.size())
            throw Error(ErrorCode::parse, "trigger must be PV:EVENT");
        SnapshotSpec spec{trigger.substr(0, colon), trigger.substr(colon + 1), {}};
        std::vector<PropertyPath> labels;
        for (const auto& m : member_texts) {
            auto dot = m.find('.');
            std::string pv = m.substr(0, dot);
            auto path = PropertyPath::parse(dot == std::string::npos ? "value" : m.substr(dot + 1));
            if (pv.empty()) throw Error(ErrorCode::parse, "member must be PV.PATH");
            spec.members.push_back({pv, path});
            auto segs = path.segments();
            segs.insert(segs.begin(), pv);
            labels.emplace_back(std::move(segs));
        }
        auto ts = PropertyPath::parse("time_stamp");
        std::optional<std::size_t> ts_index;
        for (std::size_t i = 0; i < spec.members.size(); ++i)
            if (spec.members[i].pv == spec.trigger_pv && spec.members[i].path == ts) ts_index = i;
        bool ts_requested = ts_index.has_value();
        if (!ts_index) {
            spec.members.push_back({spec.trigger_pv, ts});
            ts_index = spec.members.size() - 1;
        }

        auto inbox = std::make_shared<Inbox<SnapshotDelivery>>();
        auto s = open_session(c, "pv-snapshot", c.wait(), [inbox](SessionState st) {
            if (st == SessionState::down) inbox->push(Failure{ErrorCode::disconnected, "connection lost"});
        });
        auto sub = await(s->snapshot_subscribe(
                             spec, [inbox](const Result<SnapshotDelivery>& r) { inbox->push(r); },
                             SnapshotOptions{initial}),
                         c.wait());
        std::size_t printed = 0;
        int rc = drain(*inbox, timeout_ms, err, "pv-snapshot", [&](const SnapshotDelivery& d) {
            const auto& fields = d.value.as_container().fields;
            Record rec{d.seq_tag, spec.trigger_pv, d.initial ? "initial" : spec.trigger_event,
                       timestamp_of(&fields[*ts_index].value), {}};
            rec.values = projected_leaves(d.type, d.value, labels, ts_requested ? std::nullopt : ts_index);
            c.print(out, rec);
            return count == 0 || ++printed < count;
        });
        sub->cancel();
        s->close();
        return rc;
    });
}

int run(std::string_view tool, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv{tool.data()};
    std::string name(tool);
    argv[0] = name.c_str();
    for (const auto& a : args) argv.push_back(a.c_str());
    int argc = static_cast<int>(argv.size());
    if (tool == "pv-info") return pv_info(argc, argv.data(), out, err);
    if (tool == "pv-get") return pv_get(argc, argv.data(), out, err);
    if (tool == "pv-put") return pv_put(argc, argv.data(), out, err);
    if (tool == "pv-monitor") return pv_monitor(argc, argv.data(), out, err);
    if (tool == "pv-snapshot") return pv_snapshot(argc, argv.data(), out, err);
    if (tool == "pv-serve") return pv_serve(argc, argv.data(), out, err);
    err << "unknown tool " << tool << "\n";
    return usage;
}

} // namespace pw::cli
