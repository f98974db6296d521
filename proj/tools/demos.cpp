// SPDX-License-Identifier: Apache-2.0
#include "demos.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>
#include <unistd.h>

#include "cli.hpp"
#include "json.hpp"
#include "pw/client.hpp"

namespace pw::demo {

using namespace std::chrono_literals;

namespace {

constexpr std::string_view telescope_text = R"(
pv telescope {
  field ra f64
  field dec f64
  field slewing bool
  init units "deg"
}
)";

constexpr std::string_view archiver_text = R"(
pv pulse {
  field value i64
  event every_update always
}
pv s1 { init units "V" }
pv s2 { init units "V" }
pv s3 { init units "V" }
)";

Value field(std::string name, Value v) { return Value::container({{std::move(name), std::move(v)}}); }

std::ofstream open_spool(const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error(ErrorCode::transport, "cannot write spool " + path);
    return f;
}

std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (const auto& p : parts) out += (out.empty() ? "" : ",") + p;
    return out;
}

/// Sleeps up to `d`; false when stopped first.
bool pause(std::stop_token st, std::chrono::milliseconds d) {
    std::mutex mu;
    std::condition_variable_any cv;
    std::unique_lock lock(mu);
    return !cv.wait_for(lock, st, d, [] { return false; });
}

// ---------------------------------------------------------------------------

class Telescope final : public Demo {
public:
    Telescope(Server& server, const Options& o) : opts_(o) {
        auto& db = server.database();
        pv_ = db.get("telescope");
        pv_->register_event_kind("target_changed", target_changed);
        if (!o.spool.empty()) spool_ = open_spool(o.spool);
        queue_ = db.subscribe_commits();
        worker_ = std::jthread([this](std::stop_token st) { run(st); });
    }
    ~Telescope() override { stop(); }

    bool done() const override { return false; }
    bool wait_done(std::chrono::milliseconds) override { return false; }
    std::string summary() const override { return "telescope: " + std::to_string(slews_.load()) + " slews"; }

    void stop() override {
        if (!worker_.joinable()) return;
        worker_.request_stop();
        queue_->close();
        worker_.join();
    }

private:
    void run(std::stop_token st) {
        while (!st.stop_requested()) {
            auto e = queue_->pop(50ms);
            if (!e) {
                if (queue_->closed()) return;
                continue;
            }
            if (e->pv != "telescope") continue;
            record(*e);
            bool target = std::find(e->fired.begin(), e->fired.end(), "target_changed") != e->fired.end();
            if (!target) continue;
            ++slews_;
            pv_->post(field("slewing", true));
            if (!pause(st, opts_.slew)) return;
            pv_->post(field("slewing", false));
        }
    }

    void record(const CommitEvent& e) {
        if (!spool_.is_open()) return;
        cli::Record r{e.pv_seq, e.pv, e.fired.empty() ? "commit" : join(e.fired), 0, {}};
        if (auto* ts = e.state.find(PropertyPath::parse("time_stamp")); ts && ts->is<std::int64_t>())
            r.timestamp = ts->get<std::int64_t>();
        for (const char* name : {"ra", "dec", "slewing"}) {
            auto path = PropertyPath::parse(name);
            if (auto* v = e.state.find(path)) r.values.push_back({name, descriptor_at(e.schema, path), *v});
        }
        spool_ << cli::to_json(r) << std::endl;
    }

    Options opts_;
    std::shared_ptr<ProcessVariable> pv_;
    std::ofstream spool_;
    std::shared_ptr<CommitQueue> queue_;
    std::atomic<int> slews_{0};
    std::jthread worker_;
};

// ---------------------------------------------------------------------------

class Archiver final : public Demo {
public:
    Archiver(Server& server, const Options& o) : opts_(o), db_(server.database_ptr()) {
        spool_ = open_spool(o.spool.empty() ? "archive.jsonl" : o.spool);
        log_queue_ = db_->subscribe_commits();

        static std::atomic<int> counter{0};
        std::string hub = "loop://archiver-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
        internal_ = Server::start(db_, hub);
        ClientOptions co;
        co.peer_name = "archiver";
        session_ = Session::create(internal_->address(), co);
        if (!session_->wait_up(5s)) throw Error(ErrorCode::transport, "archiver could not reach its node");

        SnapshotSpec spec{"pulse", "every_update", {}};
        for (const char* pv : {"s1", "s2", "s3", "pulse"}) spec.members.push_back({pv, PropertyPath::parse("value")});
        spec.members.push_back({"pulse", PropertyPath::parse("time_stamp")});
        auto sub = session_->snapshot_subscribe(spec, [this](const Result<SnapshotDelivery>& r) { write(r); });
        const auto& r = sub.wait();
        if (!r.ok()) throw Error(r.error().code, r.error().message);
        sub_ = r.value();
        generator_ = std::jthread([this](std::stop_token st) { generate(st); });
    }
    ~Archiver() override { stop(); }

    bool done() const override {
        std::lock_guard lock(mu_);
        return finished_ && (written_ >= sent_ || failed_);
    }

    bool wait_done(std::chrono::milliseconds timeout) override {
        std::unique_lock lock(mu_);
        return cv_.wait_for(lock, timeout, [&] { return finished_ && (written_ >= sent_ || failed_); });
    }

    std::string summary() const override {
        std::lock_guard lock(mu_);
        return "archiver: " + std::to_string(written_) + " snapshots of " + std::to_string(sent_) + " pulses";
    }

    void stop() override {
        if (generator_.joinable()) {
            generator_.request_stop();
            generator_.join();
        }
        if (sub_) sub_->cancel();
        if (session_) session_->close();
        if (internal_) internal_->stop();
        std::lock_guard lock(mu_);
        if (spool_.is_open()) spool_.close();
    }

    /// Every commit since the demo started.
    std::vector<CommitEvent> log() const {
        std::lock_guard lock(mu_);
        for (auto& e : log_queue_->drain()) log_.push_back(std::move(e));
        return log_;
    }

private:
    void generate(std::stop_token st) {
        if (opts_.delay.count() > 0 && !pause(st, opts_.delay)) return;
        auto pulse = db_->get("pulse");
        for (int k = 1; k <= opts_.pulses && !st.stop_requested(); ++k) {
            double x = k;
            db_->group_composite({{"s1", field("value", x)}, {"s2", field("value", 2 * x)},
                                  {"s3", field("value", x * x)}});
            pulse->post(field("value", std::int64_t{k}));
            {
                std::lock_guard lock(mu_);
                ++sent_;
            }
            if (k < opts_.pulses && !pause(st, opts_.period)) break;
        }
        {
            std::lock_guard lock(mu_);
            finished_ = true;
        }
        cv_.notify_all();
    }

    void write(const Result<SnapshotDelivery>& r) {
        std::lock_guard lock(mu_);
        if (!r.ok()) {
            failed_ = true;
            cv_.notify_all();
            return;
        }
        const auto& d = r.value();
        const auto& fields = d.value.as_container().fields;
        cli::Record rec{d.seq_tag, "pulse", d.initial ? "initial" : "every_update",
                        fields[4].value.get<std::int64_t>(), {}};
        const char* names[] = {"s1.value", "s2.value", "s3.value", "pulse.value"};
        for (std::size_t i = 0; i < 4; ++i) rec.values.push_back({names[i], d.type->fields()[i].type, fields[i].value});
        if (spool_.is_open()) spool_ << cli::to_json(rec) << std::endl;
        ++written_;
        cv_.notify_all();
    }

    Options opts_;
    std::shared_ptr<Database> db_;
    std::ofstream spool_;
    std::shared_ptr<CommitQueue> log_queue_;
    std::unique_ptr<Server> internal_;
    std::shared_ptr<Session> session_;
    std::shared_ptr<SnapshotSubscription> sub_;

    mutable std::mutex mu_;
    std::condition_variable cv_;
    mutable std::vector<CommitEvent> log_;
    int sent_ = 0;
    int written_ = 0;
    bool finished_ = false;
    bool failed_ = false;

    std::jthread generator_;
};

} // namespace

bool target_changed(const Value& previous, const Value& current) {
    auto changed = [&](std::string_view name) {
        const Value* a = previous.is<Container>() ? previous.as_container().find(name) : nullptr;
        const Value* b = current.is<Container>() ? current.as_container().find(name) : nullptr;
        return a && b && !(*a == *b);
    };
    return changed("ra") && changed("dec");
}

bool is_demo(std::string_view name) noexcept { return name == "telescope" || name == "archiver"; }

std::vector<std::string> demo_names() { return {"telescope", "archiver"}; }

NodeConfig demo_config(std::string_view name) {
    if (name == "telescope") return parse_config(telescope_text);
    if (name == "archiver") return parse_config(archiver_text);
    throw Error(ErrorCode::invalid_argument, "unknown demo '" + std::string(name) + "'");
}

std::unique_ptr<Demo> start(std::string_view name, Server& server, const Options& options) {
    if (name == "telescope") return std::make_unique<Telescope>(server, options);
    if (name == "archiver") return std::make_unique<Archiver>(server, options);
    throw Error(ErrorCode::invalid_argument, "unknown demo '" + std::string(name) + "'");
}

std::vector<CommitEvent> archive_log(const Demo& archiver) {
    auto* a = dynamic_cast<const Archiver*>(&archiver);
    if (!a) throw Error(ErrorCode::invalid_argument, "not an archiver demo");
    return a->log();
}

ArchiveCheck check_archive(const std::string& spool, const std::vector<CommitEvent>& log) {
    ArchiveCheck out;
    std::vector<const CommitEvent*> ordered;
    for (const auto& e : log) ordered.push_back(&e);
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const CommitEvent* a, const CommitEvent* b) { return a->node_seq < b->node_seq; });

    std::map<std::uint64_t, bool> pulse_tags;
    for (const auto* e : ordered)
        if (e->pv == "pulse" && !e->snapshots.empty()) pulse_tags[e->node_seq] = true;

    auto value_of = [](const CommitEvent& e) -> std::optional<double> {
        auto* v = e.state.find(PropertyPath::parse("value"));
        return v ? v->to_f64() : std::nullopt;
    };

    std::ifstream in(spool);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++out.lines;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
            ++out.unparsable;
            continue;
        }
        auto tag = j.at("seq").get<std::uint64_t>();
        if (!pulse_tags.count(tag)) ++out.unmatched;
        std::map<std::string, double> expected;
        for (const auto* e : ordered) {
            if (e->node_seq > tag) break;
            if (auto v = value_of(*e)) expected[e->pv + ".value"] = *v;
        }
        const auto& values = j.at("values");
        bool ok = true;
        for (const char* key : {"s1.value", "s2.value", "s3.value", "pulse.value"}) {
            if (!values.contains(key) || !expected.count(key) || values[key].get<double>() != expected[key]) ok = false;
        }
        if (!ok) ++out.incoherent;
    }
    return out;
}

} // namespace pw::demo
