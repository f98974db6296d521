// SPDX-License-Identifier: Apache-2.0
#include "pw/server.hpp"

#include <algorithm>
#include <condition_variable>
#include <list>
#include <set>
#include <thread>

#include "pw/detail/lock_audit.hpp"
#include "pw/protocol.hpp"
#include "pw/wire.hpp"

namespace pw {

using wire::Command;

namespace {

std::vector<PropertyPath> top_level_paths(const TypeDescriptor& schema) {
    std::vector<PropertyPath> out;
    for (const auto& f : schema.fields()) out.emplace_back(std::vector<std::string>{f.name});
    return out;
}

/// The selected paths out of a full PV state; everything when none.
Projection select(const DescriptorPtr& schema, const Value& state, const std::vector<PropertyPath>& paths) {
    if (paths.empty()) return {schema, state};
    GenericSource src(schema, state);
    return project(src, paths);
}

Timestamp time_stamp_of(const Value& state) {
    if (state.is<Container>())
        if (const auto* ts = state.as_container().find("time_stamp"); ts && ts->is<std::int64_t>())
            return ts->get<std::int64_t>();
    return 0;
}

} // namespace

CommitResult apply_step(Database& db, const ScenarioStep& step) {
    auto pv = db.get(step.pv);
    switch (step.kind) {
    case ScenarioStep::Kind::post: return pv->post(step.update);
    case ScenarioStep::Kind::composite: return pv->apply_composite(step.update);
    case ScenarioStep::Kind::alarm: return pv->set_alarm(step.severity, step.condition);
    }
    return {};
}

struct Server::Impl {
    struct Connection;

    std::shared_ptr<Database> db;
    std::unique_ptr<transport::Listener> listener;
    std::string bound;
    std::shared_ptr<CommitQueue> commits;
    std::thread acceptor;
    std::thread fanout;
    std::atomic<bool> stopping{false};

    mutable detail::TrackedMutex conns_mu;
    std::list<std::shared_ptr<Connection>> conns;

    detail::TrackedMutex kinds_mu;
    /// (channel pv or empty for node scope, name) -> predicate text.
    std::map<std::pair<std::string, std::string>, std::string> registered;

    detail::TrackedMutex scenario_mu;
    std::condition_variable_any scenario_cv;
    std::jthread scenario;

    std::atomic<std::uint64_t> frames_in{0}, monitor_events{0}, snapshot_events{0};

    struct Connection {
        Impl* server;
        std::unique_ptr<transport::Stream> stream;
        std::thread reader;
        std::atomic<bool> finished{false};

        detail::TrackedMutex wmu;
        wire::OutboundTypes out_types;
        wire::BatchBuffer batch;

        wire::InboundTypes in_types;
        bool greeted = false;

        struct Monitor {
            std::shared_ptr<ProcessVariable> pv;
            std::set<std::string, std::less<>> kinds;
            std::vector<PropertyPath> paths;
            std::uint64_t min_seq = 0;
        };
        detail::TrackedMutex mu;
        std::map<std::uint32_t, std::shared_ptr<ProcessVariable>> channels;
        std::uint32_t next_channel = 1;
        std::map<std::uint32_t, Monitor> monitors;
        std::map<std::uint64_t, std::uint32_t> snap_subs;
        std::map<std::uint32_t, std::uint64_t> snap_triggers;

        Connection(Impl* s, std::unique_ptr<transport::Stream> st)
            : server(s), stream(std::move(st)), batch([this](wire::ByteView b) { stream->write(b); }) {}

        /// Caller holds wmu.
        void append(Command c, std::uint8_t flags, wire::ByteView payload) {
            try {
                batch.append(c, flags, payload);
            } catch (const Error&) {
                stream->close();
            }
        }

        void send(Command c, std::uint8_t flags, const wire::Bytes& payload) {
            std::lock_guard lock(wmu);
            append(c, flags, payload);
        }

        template <class Msg>
        void send_typed(Command c, std::uint8_t flags, const Msg& m) {
            std::lock_guard lock(wmu);
            wire::TypeWriter types(&out_types, [&](Command cc, wire::ByteView p) { append(cc, 0, p); });
            auto payload = proto::encode(m, types);
            append(c, flags, payload);
        }

        void flush() {
            std::lock_guard lock(wmu);
            try {
                batch.flush();
            } catch (const Error&) {
                stream->close();
            }
        }

        void reply_error(std::uint32_t req, const Error& e) {
            send(Command::error, wire::flags::response, proto::encode(proto::ErrorReply{req, e.code(), e.what()}));
        }

        std::shared_ptr<ProcessVariable> channel(std::uint32_t id) {
            std::lock_guard lock(mu);
            auto it = channels.find(id);
            if (it == channels.end()) throw Error(ErrorCode::invalid_argument, "unknown channel " + std::to_string(id));
            return it->second;
        }

        void run() {
            wire::Deframer deframer;
            std::vector<std::uint8_t> buffer(64 * 1024);
            try {
                while (true) {
                    auto n = stream->read(buffer);
                    if (n == 0) break;
                    std::vector<wire::Frame> frames;
                    try {
                        frames = deframer.feed(wire::ByteView(buffer.data(), n));
                    } catch (const Error& e) {
                        reply_error(0, e);
                        flush();
                        break;
                    }
                    bool close_after = false;
                    for (const auto& f : frames) {
                        ++server->frames_in;
                        if (!handle(f)) {
                            close_after = true;
                            break;
                        }
                    }
                    flush();
                    if (close_after) break;
                }
            } catch (const Error&) {
            }
            teardown();
        }

        void teardown() {
            stream->close();
            std::lock_guard lock(mu);
            for (const auto& [trigger, sub] : snap_subs) server->db->remove_snapshot_trigger(trigger);
            snap_subs.clear();
            snap_triggers.clear();
            monitors.clear();
            channels.clear();
            finished = true;
        }

        /// False when the connection must be closed.
        bool handle(const wire::Frame& f) {
            std::uint32_t req = 0;
            try {
                if (!greeted && f.command != Command::hello) {
                    reply_error(0, Error(ErrorCode::protocol, "expected HELLO"));
                    return false;
                }
                switch (f.command) {
                case Command::hello: {
                    auto h = proto::decode_hello(f.payload);
                    if (h.version != wire::version) {
                        reply_error(0, Error(ErrorCode::protocol, "unsupported protocol version " +
                                                                      std::to_string(h.version)));
                        return false;
                    }
                    greeted = true;
                    send(Command::hello, wire::flags::response, proto::encode(proto::Hello{wire::version, "pw-server"}));
                    return true;
                }
                case Command::type_reg: {
                    auto [id, d] = wire::decode_type_reg(f.payload);
                    in_types.learn(id, d);
                    return true;
                }
                case Command::echo:
                    if (!f.is_response()) send(Command::echo, wire::flags::response, f.payload);
                    return true;
                default: break;
                }
                req = proto::peek_req(f.payload);
                switch (f.command) {
                case Command::channel_open: on_open(proto::decode_open_request(f.payload)); break;
                case Command::get: on_get(proto::decode_get_request(f.payload)); break;
                case Command::put:
                case Command::put_composite:
                    on_put(proto::decode_put_request(f.payload, in_types), f.command == Command::put_composite);
                    break;
                case Command::monitor_sub: on_monitor(proto::decode_monitor_request(f.payload)); break;
                case Command::snap_sub: on_snapshot(proto::decode_snapshot_request(f.payload)); break;
                case Command::event_reg: on_event_reg(proto::decode_event_reg(f.payload)); break;
                default:
                    throw Error(ErrorCode::protocol, "unexpected " + std::string(wire::command_name(f.command)));
                }
            } catch (const Error& e) {
                reply_error(req, e);
                // A bad type reference leaves the registries out of step.
                return e.code() != ErrorCode::protocol;
            }
            return true;
        }

        void on_open(const proto::OpenRequest& m) {
            auto pv = server->db->get(m.pv);
            std::uint32_t id;
            {
                std::lock_guard lock(mu);
                id = next_channel++;
                channels[id] = pv;
            }
            send_typed(Command::channel_open, wire::flags::response,
                       proto::OpenReply{m.req, id, pv->schema(), pv->event_kinds()});
        }

        void on_get(const proto::GetRequest& m) {
            auto pv = channel(m.channel);
            auto paths = m.paths.empty() ? top_level_paths(*pv->schema()) : m.paths;
            auto [seq, proj] = pv->read(paths);
            send_typed(Command::get, wire::flags::response,
                       proto::GetReply{m.req, seq, proj.descriptor, std::move(proj.value)});
        }

        void on_put(const proto::PutRequest& m, bool composite) {
            if (m.parts.empty()) throw Error(ErrorCode::invalid_argument, "put without parts");
            if (!composite && m.parts.size() != 1) throw Error(ErrorCode::invalid_argument, "PUT carries one part");
            auto coercion = (m.flags & proto::PutRequest::coerce) ? CopyPolicy::Coercion::allow
                                                                  : CopyPolicy::Coercion::forbid;
            proto::PutReply reply{m.req, {}};
            if (m.parts.size() == 1) {
                auto pv = channel(m.parts[0].channel);
                reply.results.push_back(composite ? pv->apply_composite(m.parts[0].value, now_ns(), coercion)
                                                  : pv->post(m.parts[0].value, now_ns(), coercion));
            } else {
                std::vector<std::pair<std::string, Value>> parts;
                for (const auto& p : m.parts) parts.emplace_back(channel(p.channel)->name(), p.value);
                reply.results = server->db->group_composite(parts, now_ns(), coercion);
            }
            send(m.parts.size() == 1 && !composite ? Command::put : Command::put_composite, wire::flags::response,
                 proto::encode(reply));
        }

        void on_monitor(const proto::MonitorRequest& m) {
            if (m.flags & proto::MonitorRequest::cancel) {
                {
                    std::lock_guard lock(mu);
                    monitors.erase(m.sub);
                }
                send(Command::monitor_sub, wire::flags::response, proto::encode(proto::Ack{m.req}));
                return;
            }
            auto pv = channel(m.channel);
            if (m.kinds.empty()) throw Error(ErrorCode::invalid_argument, "a monitor needs at least one event kind");
            for (const auto& k : m.kinds)
                if (!pv->has_event_kind(k))
                    throw Error(ErrorCode::unknown_event, "unknown event kind '" + k + "' on " + pv->name());
            if (!m.paths.empty()) projection_descriptor(pv->schema(), m.paths);

            std::lock_guard lock(mu);
            auto [seq, full] = pv->read(top_level_paths(*pv->schema()));
            monitors[m.sub] = Monitor{pv, {m.kinds.begin(), m.kinds.end()}, m.paths, seq};
            send(Command::monitor_sub, wire::flags::response, proto::encode(proto::Ack{m.req}));
            if (!(m.flags & proto::MonitorRequest::no_initial)) {
                auto sel = select(pv->schema(), full.value, m.paths);
                send_typed(Command::monitor_evt, 0,
                           proto::MonitorEvent{m.sub, seq, time_stamp_of(full.value), true, {}, sel.descriptor,
                                               std::move(sel.value)});
                ++server->monitor_events;
            }
        }

        void on_snapshot(const proto::SnapshotRequest& m) {
            std::lock_guard lock(mu);
            if (auto it = snap_triggers.find(m.sub); it != snap_triggers.end()) {
                server->db->remove_snapshot_trigger(it->second);
                snap_subs.erase(it->second);
                snap_triggers.erase(it);
            }
            if (m.flags & proto::SnapshotRequest::cancel) {
                send(Command::snap_sub, wire::flags::response, proto::encode(proto::Ack{m.req}));
                return;
            }
            auto trigger = server->db->add_snapshot_trigger(m.spec);
            snap_subs[trigger] = m.sub;
            snap_triggers[m.sub] = trigger;
            send(Command::snap_sub, wire::flags::response, proto::encode(proto::Ack{m.req}));
            if (m.flags & proto::SnapshotRequest::with_initial) {
                auto snap = server->db->snapshot(m.spec);
                send_typed(Command::snap_evt, 0,
                           proto::SnapshotEvent{m.sub, snap.seq_tag, true, snap.members.descriptor,
                                                std::move(snap.members.value)});
                ++server->snapshot_events;
            }
        }

        void on_event_reg(const proto::EventRegRequest& m) {
            std::shared_ptr<ProcessVariable> pv;
            if (m.channel != 0) pv = channel(m.channel);
            auto key = std::make_pair(pv ? pv->name() : std::string(), m.name);
            auto text = m.predicate.to_string();
            {
                std::lock_guard lock(server->kinds_mu);
                auto it = server->registered.find(key);
                if (it != server->registered.end()) {
                    if (it->second != text)
                        throw Error(ErrorCode::duplicate_name, "event kind '" + m.name + "' is already registered");
                } else {
                    auto predicate = m.predicate.compile();
                    if (pv) pv->register_event_kind(m.name, std::move(predicate));
                    else server->db->register_event_kind(m.name, std::move(predicate));
                    server->registered.emplace(key, text);
                }
            }
            send(Command::event_reg, wire::flags::response, proto::encode(proto::Ack{m.req}));
        }

        /// Fan-out side: one committed update.
        void deliver(const CommitEvent& e) {
            std::lock_guard lock(mu);
            for (const auto& [sub, mon] : monitors) {
                if (mon.pv->name() != e.pv || e.pv_seq <= mon.min_seq) continue;
                std::vector<std::string> fired;
                for (const auto& k : e.fired)
                    if (mon.kinds.contains(k)) fired.push_back(k);
                if (fired.empty()) continue;
                auto sel = select(e.schema, e.state, mon.paths);
                send_typed(Command::monitor_evt, 0,
                           proto::MonitorEvent{sub, e.pv_seq, time_stamp_of(e.state), false, std::move(fired),
                                               sel.descriptor, std::move(sel.value)});
                ++server->monitor_events;
            }
            for (const auto& cap : e.snapshots) {
                auto it = snap_subs.find(cap.trigger_id);
                if (it == snap_subs.end()) continue;
                send_typed(Command::snap_evt, 0,
                           proto::SnapshotEvent{it->second, cap.snapshot.seq_tag, false,
                                                cap.snapshot.members.descriptor, cap.snapshot.members.value});
                ++server->snapshot_events;
            }
        }
    };

    std::vector<std::shared_ptr<Connection>> live() const {
        std::lock_guard lock(conns_mu);
        std::vector<std::shared_ptr<Connection>> out;
        for (const auto& c : conns)
            if (!c->finished) out.push_back(c);
        return out;
    }

    void accept_loop() {
        while (!stopping) {
            auto stream = listener->accept();
            if (!stream) break;
            auto conn = std::make_shared<Connection>(this, std::move(stream));
            std::vector<std::shared_ptr<Connection>> done;
            {
                std::lock_guard lock(conns_mu);
                for (auto it = conns.begin(); it != conns.end();) {
                    if ((*it)->finished) {
                        done.push_back(*it);
                        it = conns.erase(it);
                    } else {
                        ++it;
                    }
                }
                if (stopping) {
                    conn->stream->close();
                    break;
                }
                conns.push_back(conn);
                conn->reader = std::thread([c = conn.get()] { c->run(); });
            }
            for (auto& c : done)
                if (c->reader.joinable()) c->reader.join();
        }
    }

    void fanout_loop() {
        while (true) {
            auto first = commits->pop(std::chrono::milliseconds(100));
            if (!first) {
                if (commits->closed()) break;
                continue;
            }
            auto rest = commits->drain();
            auto targets = live();
            for (auto& c : targets) {
                c->deliver(*first);
                for (const auto& e : rest) c->deliver(e);
                c->flush();
            }
        }
    }

    void stop() {
        if (stopping.exchange(true)) return;
        {
            std::lock_guard lock(scenario_mu);
            scenario.request_stop();
        }
        scenario_cv.notify_all();
        if (scenario.joinable()) scenario.join();
        listener->close();
        if (acceptor.joinable()) acceptor.join();
        listener.reset();
        std::list<std::shared_ptr<Connection>> all;
        {
            std::lock_guard lock(conns_mu);
            all.swap(conns);
        }
        for (auto& c : all) c->stream->close();
        for (auto& c : all)
            if (c->reader.joinable()) c->reader.join();
        commits->close();
        if (fanout.joinable()) fanout.join();
    }
};

Server::Server(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}

Server::~Server() { stop(); }

std::unique_ptr<Server> Server::start(std::shared_ptr<Database> db, std::string_view address) {
    auto impl = std::make_unique<Impl>();
    impl->db = std::move(db);
    impl->listener = transport::listen(address);
    impl->bound = impl->listener->address();
    impl->commits = impl->db->subscribe_commits();
    auto* raw = impl.get();
    impl->acceptor = std::thread([raw] { raw->accept_loop(); });
    impl->fanout = std::thread([raw] { raw->fanout_loop(); });
    return std::unique_ptr<Server>(new Server(std::move(impl)));
}

std::unique_ptr<Server> Server::start(const NodeConfig& config, std::string_view address) {
    auto db = std::make_shared<Database>();
    populate(*db, config);
    std::string addr = !address.empty() ? std::string(address) : config.listen.value_or(std::string(default_address));
    auto server = start(std::move(db), addr);
    if (!config.scenario.empty()) server->run_scenario(config.scenario);
    return server;
}

std::string Server::address() const { return impl_->bound; }
Database& Server::database() noexcept { return *impl_->db; }
std::shared_ptr<Database> Server::database_ptr() const noexcept { return impl_->db; }

void Server::run_scenario(std::vector<ScenarioStep> steps) {
    wait_scenario();
    std::lock_guard lock(impl_->scenario_mu);
    if (impl_->stopping) return;
    auto* impl = impl_.get();
    impl->scenario = std::jthread([impl, steps = std::move(steps)](std::stop_token stop) {
        auto start = std::chrono::steady_clock::now();
        for (const auto& step : steps) {
            {
                std::unique_lock lock(impl->scenario_mu);
                impl->scenario_cv.wait_until(lock, stop, start + std::chrono::milliseconds(step.at_ms),
                                             [] { return false; });
            }
            if (stop.stop_requested()) return;
            try {
                apply_step(*impl->db, step);
            } catch (const Error&) {
            }
        }
    });
}

void Server::wait_scenario() {
    if (impl_->scenario.joinable()) impl_->scenario.join();
}

ServerStats Server::stats() const {
    return {impl_->live().size(), impl_->frames_in.load(), impl_->monitor_events.load(),
            impl_->snapshot_events.load()};
}

void Server::stop() { impl_->stop(); }

} // namespace pw
