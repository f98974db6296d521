// SPDX-License-Identifier: Apache-2.0
#include "pw/client.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>
#include <map>
#include <thread>

namespace pw {

using wire::Command;
using Clock = std::chrono::steady_clock;

std::string_view to_string(SessionState s) noexcept {
    switch (s) {
    case SessionState::connecting: return "connecting";
    case SessionState::up: return "up";
    case SessionState::down: return "down";
    case SessionState::closed: return "closed";
    }
    return "?";
}

namespace detail {

namespace {

std::int64_t ticks() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now().time_since_epoch()).count();
}

void dump(const wire::Frame& f, std::string_view dir) {
    auto line = wire::dump_frame(f, dir) + "\n";
    std::fputs(line.c_str(), stderr);
}

template <class T>
using StatePtr = std::shared_ptr<typename Pending<T>::State>;

template <class T>
StatePtr<T> make_state(std::shared_ptr<SessionCore> session) {
    auto st = std::make_shared<typename Pending<T>::State>();
    st->core.session = std::move(session);
    return st;
}

template <class T>
void fulfill(const StatePtr<T>& st, Result<T> r) {
    {
        std::lock_guard lock(st->core.mu);
        if (st->core.done) return;
        st->result.emplace(std::move(r));
        st->core.done = true;
    }
    st->core.complete();
}

template <class T>
Pending<T> failed(std::shared_ptr<SessionCore> session, Failure f) {
    auto st = make_state<T>(std::move(session));
    fulfill<T>(st, std::move(f));
    return Pending<T>(st);
}

Failure to_failure(const Error& e) { return {e.code(), e.what()}; }

/// Shape of a partial update: the channel's own field descriptors where the
/// data conforms, the data's natural type elsewhere so the server reports
/// the mismatch.
DescriptorPtr natural_descriptor(const Value& v) {
    switch (v.code()) {
    case TypeCode::container: {
        std::vector<FieldDescriptor> fields;
        for (const auto& f : v.as_container().fields) fields.push_back({f.name, natural_descriptor(f.value), {}});
        return TypeDescriptor::container(std::move(fields));
    }
    case TypeCode::array: {
        const auto& a = v.as_array();
        auto elem = a.elements.empty() ? TypeDescriptor::scalar(TypeCode::f64) : natural_descriptor(a.elements[0]);
        return TypeDescriptor::array(elem, static_cast<std::uint8_t>(a.rank()));
    }
    case TypeCode::enumerated:
        throw Error(ErrorCode::type_mismatch, "enumerated value without a matching field");
    default: return TypeDescriptor::scalar(v.code());
    }
}

DescriptorPtr partial_descriptor(const DescriptorPtr& schema, const Value& v, const std::string& where) {
    if (schema && schema->code() == TypeCode::container && v.is<Container>()) {
        std::vector<FieldDescriptor> fields;
        for (const auto& f : v.as_container().fields) {
            const auto* fd = schema->field(f.name);
            auto path = where.empty() ? f.name : where + "." + f.name;
            if (!fd) throw Error(ErrorCode::absent_path, "no property '" + path + "'");
            fields.push_back({f.name, partial_descriptor(fd->type, f.value, path), {}});
        }
        return TypeDescriptor::container(std::move(fields));
    }
    if (schema && conforms(v, *schema)) return schema;
    return natural_descriptor(v);
}

} // namespace

/// Per-subscription delivery queue drained on the dispatch thread.
template <class T>
struct Feed : std::enable_shared_from_this<Feed<T>> {
    std::weak_ptr<SessionCore> session;
    std::function<void(const Result<T>&)> callback;
    std::size_t depth = 0;
    OverflowPolicy overflow = OverflowPolicy::conflate_latest;

    TrackedMutex mu;
    std::deque<Result<T>> queue;
    bool scheduled = false;
    bool accepting = true;
    bool cancelled = false;
    std::uint64_t delivered = 0;
    std::uint64_t conflated = 0;

    virtual ~Feed() = default;

    /// False when the push overflowed in error mode and ended the feed.
    bool push(Result<T> item);
    void run_one();
    void cancel() {
        std::lock_guard lock(mu);
        cancelled = true;
        accepting = false;
        queue.clear();
    }
};

struct ChannelState {
    std::shared_ptr<SessionCore> session;
    std::string name;
    // Guarded by the session mutex.
    std::uint32_t server_id = 0;
    DescriptorPtr schema;
    std::vector<std::string> kinds;
    bool broken = false;
};

struct MonitorState : Feed<MonitorDelivery> {
    std::uint32_t sub = 0;
    std::shared_ptr<ChannelState> channel;
    MonitorOptions options;
    std::uint64_t last_seq = 0;
    bool seen = false;
};

struct SnapshotState : Feed<SnapshotDelivery> {
    std::uint32_t sub = 0;
    SnapshotSpec spec;
};

struct Conn {
    std::uint64_t gen = 0;
    std::unique_ptr<transport::Stream> stream;
    TrackedMutex wmu;
    wire::OutboundTypes out_types;
    wire::BatchBuffer batch;
    std::thread reader;
    std::atomic<std::int64_t> last_rx{0};

    TrackedMutex hmu;
    std::condition_variable_any hcv;
    int hello = 0;
    Failure hello_failure;

    Conn(std::unique_ptr<transport::Stream> s, std::size_t threshold)
        : stream(std::move(s)), batch([this](wire::ByteView b) { stream->write(b); }, threshold) {}
};

class SessionCore : public std::enable_shared_from_this<SessionCore> {
public:
    using Build = std::function<wire::Bytes(std::uint32_t req, wire::TypeWriter& types)>;
    using OnReply = std::function<void(const wire::Frame&, const wire::InboundTypes&)>;
    using OnFail = std::function<void(const Failure&)>;

    struct Handler {
        OnReply reply;
        OnFail fail;
        std::uint64_t gen = 0;
        /// Kept across a connection loss instead of failing (channel opens).
        bool survive = false;
    };

    struct OpenWait {
        std::shared_ptr<ChannelState> channel;
        StatePtr<Channel> pending;
        std::uint64_t sent_gen = 0;
    };

    struct EventReg {
        std::shared_ptr<ChannelState> channel;
        std::string name;
        proto::PredicateSpec predicate;
    };

    SessionCore(std::string addr, ClientOptions o) : address(std::move(addr)), opts(std::move(o)) {}

    const std::string address;
    const ClientOptions opts;

    mutable TrackedMutex mu;
    mutable std::condition_variable_any state_cv;
    SessionState state = SessionState::connecting;
    bool closing = false;
    std::shared_ptr<Conn> conn;
    std::vector<std::shared_ptr<Conn>> retired;
    std::uint64_t next_gen = 1;
    std::uint32_t next_req = 1;
    std::uint32_t next_sub = 1;
    std::map<std::uint32_t, Handler> pending;
    std::vector<std::shared_ptr<ChannelState>> channels;
    std::vector<OpenWait> opening;
    std::map<std::uint32_t, std::shared_ptr<MonitorState>> monitors;
    std::map<std::uint32_t, std::shared_ptr<SnapshotState>> snaps;
    std::vector<EventReg> event_regs;
    transport::StreamStats base_stats;
    bool outage_reported = false;

    TrackedMutex dmu;
    std::condition_variable_any dcv;
    std::deque<std::function<void()>> tasks;
    bool dispatcher_stop = false;
    std::thread dispatcher;
    std::thread supervisor;

    void start() {
        auto self = shared_from_this();
        dispatcher = std::thread([self] { self->dispatch_loop(); });
        supervisor = std::thread([self] { self->supervise(); });
    }

    // ---- dispatch

    void post(std::function<void()> task) {
        {
            std::lock_guard lock(dmu);
            if (dispatcher_stop) return;
            tasks.push_back(std::move(task));
        }
        dcv.notify_one();
    }

    void dispatch_loop() {
        while (true) {
            std::function<void()> task;
            {
                std::unique_lock lock(dmu);
                dcv.wait(lock, [&] { return !tasks.empty() || dispatcher_stop; });
                if (tasks.empty()) return;
                task = std::move(tasks.front());
                tasks.pop_front();
            }
            try {
                invoke_user(task);
            } catch (...) {
            }
        }
    }

    /// Caller holds mu.
    void set_state_locked(SessionState s) {
        if (state == s) return;
        state = s;
        state_cv.notify_all();
        if (opts.on_state) {
            auto cb = opts.on_state;
            post([cb, s] { cb(s); });
        }
    }

    void report(Failure f) {
        if (opts.on_error) {
            auto cb = opts.on_error;
            post([cb, f = std::move(f)] { cb(f); });
        }
    }

    // ---- sending

    /// Caller holds c.wmu.
    void append(Conn& c, Command cmd, std::uint8_t flags, wire::ByteView payload) {
        if (opts.dump_frames) dump(wire::Frame{cmd, flags, wire::Bytes(payload.begin(), payload.end())}, ">>");
        try {
            c.batch.append(cmd, flags, payload);
        } catch (const Error&) {
            c.stream->close();
        }
    }

    void flush_conn(Conn& c) {
        std::lock_guard lock(c.wmu);
        try {
            c.batch.flush();
        } catch (const Error&) {
            c.stream->close();
        }
    }

    void flush() {
        std::shared_ptr<Conn> c;
        {
            std::lock_guard lock(mu);
            c = conn;
        }
        if (c) flush_conn(*c);
    }

    /// Sends a request on `via`, or on the current connection when it is up.
    /// Returns false after failing the handler.
    bool issue(Command cmd, const Build& build, Handler h, const std::shared_ptr<Conn>& via = nullptr) {
        Failure failure;
        {
            std::lock_guard lock(mu);
            std::shared_ptr<Conn> c;
            if (closing) {
                failure = {ErrorCode::disconnected, "session closed"};
            } else if (via) {
                if (conn == via) c = via;
                else failure = {ErrorCode::disconnected, "connection lost"};
            } else if (state == SessionState::up && conn) {
                c = conn;
            } else {
                failure = {ErrorCode::disconnected, "session is " + std::string(to_string(state))};
            }
            if (c) {
                auto req = next_req++;
                h.gen = c->gen;
                try {
                    std::lock_guard wlock(c->wmu);
                    wire::TypeWriter types(&c->out_types,
                                           [&](Command cc, wire::ByteView p) { append(*c, cc, 0, p); });
                    auto payload = build(req, types);
                    pending[req] = h;
                    append(*c, cmd, 0, payload);
                    return true;
                } catch (const Error& e) {
                    pending.erase(req);
                    failure = to_failure(e);
                }
            }
        }
        if (h.fail) h.fail(failure);
        return false;
    }

    /// Fire and forget on the current connection.
    void send_plain(Command cmd, const wire::Bytes& payload) {
        std::lock_guard lock(mu);
        if (!conn || state != SessionState::up) return;
        std::lock_guard wlock(conn->wmu);
        append(*conn, cmd, 0, payload);
    }

    // ---- receiving

    void read_loop(std::shared_ptr<Conn> c) {
        wire::Deframer deframer;
        wire::InboundTypes inbound;
        std::vector<std::uint8_t> buffer(64 * 1024);
        Failure why{ErrorCode::disconnected, "connection closed by peer"};
        try {
            while (true) {
                auto n = c->stream->read(buffer);
                if (n == 0) break;
                c->last_rx = ticks();
                for (auto& f : deframer.feed(wire::ByteView(buffer.data(), n))) {
                    if (opts.dump_frames) dump(f, "<<");
                    on_frame(c, f, inbound);
                }
            }
        } catch (const Error& e) {
            why = {ErrorCode::disconnected, e.what()};
        }
        {
            std::lock_guard lock(c->hmu);
            if (c->hello == 0) {
                c->hello = -1;
                c->hello_failure = why;
            }
        }
        c->hcv.notify_all();
        lost(c, why);
    }

    void on_frame(const std::shared_ptr<Conn>& c, const wire::Frame& f, wire::InboundTypes& inbound) {
        switch (f.command) {
        case Command::type_reg: {
            auto [id, d] = wire::decode_type_reg(f.payload);
            inbound.learn(id, d);
            return;
        }
        case Command::hello: {
            auto h = proto::decode_hello(f.payload);
            {
                std::lock_guard lock(c->hmu);
                if (h.version == wire::version) {
                    c->hello = 1;
                } else {
                    c->hello = -1;
                    c->hello_failure = {ErrorCode::protocol, "server speaks version " + std::to_string(h.version)};
                }
            }
            c->hcv.notify_all();
            return;
        }
        case Command::echo:
            if (!f.is_response()) {
                std::lock_guard lock(c->wmu);
                append(*c, Command::echo, wire::flags::response, f.payload);
            }
            return;
        case Command::monitor_evt: {
            auto e = proto::decode_monitor_event(f.payload, inbound);
            std::shared_ptr<MonitorState> m;
            {
                std::lock_guard lock(mu);
                if (auto it = monitors.find(e.sub); it != monitors.end()) m = it->second;
            }
            if (!m) return;
            if (!e.initial && m->seen && e.seq <= m->last_seq) return;
            m->seen = true;
            m->last_seq = e.seq;
            if (!m->push(MonitorDelivery{e.seq, e.time_stamp, e.initial, std::move(e.fired), e.type, std::move(e.value)}))
                drop_monitor(m);
            return;
        }
        case Command::snap_evt: {
            auto e = proto::decode_snapshot_event(f.payload, inbound);
            std::shared_ptr<SnapshotState> s;
            {
                std::lock_guard lock(mu);
                if (auto it = snaps.find(e.sub); it != snaps.end()) s = it->second;
            }
            if (s) s->push(SnapshotDelivery{e.seq_tag, e.initial, e.type, std::move(e.value)});
            return;
        }
        default: break;
        }
        if (f.payload.size() < 4) return;
        auto req = proto::peek_req(f.payload);
        if (f.command == Command::error && req == 0) {
            auto err = proto::decode_error(f.payload);
            {
                std::lock_guard lock(c->hmu);
                if (c->hello == 0) {
                    c->hello = -1;
                    c->hello_failure = {err.code, err.message};
                }
            }
            c->hcv.notify_all();
            report({err.code, err.message});
            return;
        }
        Handler h;
        {
            std::lock_guard lock(mu);
            auto it = pending.find(req);
            if (it == pending.end()) return;
            h = std::move(it->second);
            pending.erase(it);
        }
        if (f.command == Command::error) {
            auto err = proto::decode_error(f.payload);
            if (h.fail) h.fail({err.code, err.message});
            return;
        }
        try {
            h.reply(f, inbound);
        } catch (const Error& e) {
            if (h.fail) h.fail(to_failure(e));
        }
    }

    void drop_monitor(const std::shared_ptr<MonitorState>& m) {
        {
            std::lock_guard lock(mu);
            monitors.erase(m->sub);
        }
        proto::MonitorRequest cancel;
        cancel.sub = m->sub;
        cancel.flags = proto::MonitorRequest::cancel;
        issue(Command::monitor_sub, [cancel](std::uint32_t req, wire::TypeWriter&) mutable {
            cancel.req = req;
            return proto::encode(cancel);
        }, Handler{[](const wire::Frame&, const wire::InboundTypes&) {}, nullptr});
    }

    /// Ends connection `c`: fails its in-flight requests and marks the
    /// session down.
    void lost(const std::shared_ptr<Conn>& c, const Failure& why) {
        std::vector<Handler> failed_handlers;
        std::vector<OpenWait> failed_opens;
        {
            std::lock_guard lock(mu);
            if (conn != c) return;
            auto s = c->stream->stats();
            base_stats.writes += s.writes;
            base_stats.bytes_out += s.bytes_out;
            base_stats.bytes_in += s.bytes_in;
            conn.reset();
            retired.push_back(c);
            for (auto it = pending.begin(); it != pending.end();) {
                if (it->second.gen == c->gen && !it->second.survive) {
                    failed_handlers.push_back(std::move(it->second));
                    it = pending.erase(it);
                } else if (it->second.gen == c->gen) {
                    it = pending.erase(it);
                } else {
                    ++it;
                }
            }
            if (!opts.reconnect) failed_opens.swap(opening);
            if (state == SessionState::up) set_state_locked(SessionState::down);
            state_cv.notify_all();
        }
        c->stream->close();
        Failure f{ErrorCode::disconnected, why.message};
        for (auto& h : failed_handlers)
            if (h.fail) h.fail(f);
        for (auto& o : failed_opens) fulfill<Channel>(o.pending, f);
    }

    // ---- connection management

    std::shared_ptr<Conn> connect_once(Failure& why) {
        std::unique_ptr<transport::Stream> stream;
        try {
            stream = transport::connect(address, opts.connect_timeout);
        } catch (const Error& e) {
            why = {ErrorCode::transport, e.what()};
            return nullptr;
        }
        auto c = std::make_shared<Conn>(std::move(stream), opts.batching ? opts.batch_threshold : 0);
        c->last_rx = ticks();
        {
            std::lock_guard lock(mu);
            if (closing) {
                c->stream->close();
                return nullptr;
            }
            c->gen = next_gen++;
            conn = c;
        }
        auto self = shared_from_this();
        c->reader = std::thread([self, c] { self->read_loop(c); });
        {
            std::lock_guard lock(c->wmu);
            append(*c, Command::hello, 0, proto::encode(proto::Hello{wire::version, opts.peer_name}));
        }
        flush_conn(*c);
        std::unique_lock lock(c->hmu);
        if (!c->hcv.wait_for(lock, opts.connect_timeout, [&] { return c->hello != 0; })) {
            why = {ErrorCode::timeout, "no HELLO from " + address};
        } else if (c->hello < 0) {
            why = c->hello_failure;
        } else {
            return c;
        }
        lock.unlock();
        lost(c, why);
        return nullptr;
    }

    /// Waits for a replayed request; false when the connection must be
    /// abandoned.
    template <class S>
    bool await(const std::shared_ptr<S>& st) {
        if (!st->core.wait_done_for(opts.connect_timeout)) return false;
        return st->result->ok() || st->result->error().code != ErrorCode::disconnected;
    }

    bool replay(const std::shared_ptr<Conn>& c) {
        std::vector<EventReg> regs;
        std::vector<std::shared_ptr<ChannelState>> chans;
        std::vector<std::shared_ptr<MonitorState>> mons;
        std::vector<std::shared_ptr<SnapshotState>> snps;
        {
            std::lock_guard lock(mu);
            regs = event_regs;
            chans = channels;
            for (auto& [_, m] : monitors) mons.push_back(m);
            for (auto& [_, s] : snaps) snps.push_back(s);
        }
        for (const auto& r : regs)
            if (!r.channel && !await(send_event_reg(r, c))) return false;
        for (const auto& ch : chans) {
            auto st = make_state<Channel>(shared_from_this());
            send_open(ch, st, c);
            if (!await(st)) return false;
            if (!st->result->ok()) {
                std::lock_guard lock(mu);
                ch->broken = true;
            }
        }
        for (const auto& r : regs)
            if (r.channel && !r.channel->broken && !await(send_event_reg(r, c))) return false;
        for (const auto& m : mons) {
            if (m->channel->broken) {
                m->push(Failure{ErrorCode::unknown_pv, "PV " + m->channel->name + " is gone after reconnect"});
                std::lock_guard lock(mu);
                monitors.erase(m->sub);
                continue;
            }
            auto st = make_state<std::shared_ptr<Monitor>>(shared_from_this());
            send_monitor(m, true, st, c);
            if (!await(st)) return false;
            if (!st->result->ok()) {
                m->push(st->result->error());
                std::lock_guard lock(mu);
                monitors.erase(m->sub);
            }
        }
        for (const auto& s : snps) {
            auto st = make_state<std::shared_ptr<SnapshotSubscription>>(shared_from_this());
            send_snapshot(s, true, st, c);
            if (!await(st)) return false;
            if (!st->result->ok()) {
                s->push(st->result->error());
                std::lock_guard lock(mu);
                snaps.erase(s->sub);
            }
        }
        return true;
    }

    void supervise() {
        auto interval = std::max(std::chrono::milliseconds(1), opts.flush_interval);
        std::int64_t last_echo = 0;
        while (true) {
            std::shared_ptr<Conn> c;
            {
                std::lock_guard lock(mu);
                if (closing) break;
                c = conn;
            }
            if (!c) {
                Failure why;
                auto fresh = connect_once(why);
                if (fresh && replay(fresh)) {
                    std::vector<OpenWait> to_send;
                    {
                        std::lock_guard lock(mu);
                        if (conn != fresh) continue;
                        outage_reported = false;
                        set_state_locked(SessionState::up);
                        to_send = opening;
                    }
                    for (auto& o : to_send) send_open(o.channel, o.pending, fresh, true);
                    flush_conn(*fresh);
                    last_echo = ticks();
                    continue;
                }
                if (fresh) lost(fresh, {ErrorCode::disconnected, "replay failed"});
                std::vector<OpenWait> give_up;
                {
                    std::unique_lock lock(mu);
                    if (closing) break;
                    if (state == SessionState::connecting) set_state_locked(SessionState::down);
                    if (!outage_reported) {
                        outage_reported = true;
                        report(why);
                    }
                    if (!opts.reconnect) {
                        give_up.swap(opening);
                    }
                    state_cv.wait_for(lock, opts.reconnect_delay, [&] { return closing; });
                }
                for (auto& o : give_up) fulfill<Channel>(o.pending, Failure{ErrorCode::disconnected, why.message});
                if (!opts.reconnect) {
                    std::unique_lock lock(mu);
                    state_cv.wait(lock, [&] { return closing; });
                    break;
                }
                continue;
            }
            flush_conn(*c);
            auto now = ticks();
            auto hb = opts.heartbeat.count();
            // Declared a margin ahead of heartbeat * misses of silence, so the
            // failure is reported inside that bound.
            auto margin = std::max<std::int64_t>(interval.count(), hb / 10);
            if (now - c->last_rx.load() + margin >= hb * opts.heartbeat_misses) {
                lost(c, {ErrorCode::disconnected, "heartbeat lost"});
                continue;
            }
            if (now - last_echo >= hb) {
                last_echo = now;
                {
                    std::lock_guard lock(c->wmu);
                    append(*c, Command::echo, 0, {});
                }
            }
            std::unique_lock lock(mu);
            state_cv.wait_for(lock, interval, [&] { return closing || conn != c; });
        }
    }

    // ---- requests

    void send_open(const std::shared_ptr<ChannelState>& ch, const StatePtr<Channel>& st,
                   const std::shared_ptr<Conn>& via, bool user = false) {
        auto self = shared_from_this();
        Handler h;
        h.survive = user;
        h.reply = [self, ch, st, user](const wire::Frame& f, const wire::InboundTypes& in) {
            auto r = proto::decode_open_reply(f.payload, in);
            {
                std::lock_guard lock(self->mu);
                ch->server_id = r.channel;
                ch->schema = r.schema;
                ch->kinds = r.event_kinds;
                ch->broken = false;
                if (user) {
                    std::erase_if(self->opening, [&](const OpenWait& o) { return o.pending == st; });
                    self->channels.push_back(ch);
                }
            }
            fulfill<Channel>(st, Channel(ch));
        };
        h.fail = [self, st, user](const Failure& f) {
            if (user && f.code == ErrorCode::disconnected) return;
            if (user) {
                std::lock_guard lock(self->mu);
                std::erase_if(self->opening, [&](const OpenWait& o) { return o.pending == st; });
            }
            fulfill<Channel>(st, f);
        };
        auto name = ch->name;
        issue(Command::channel_open, [name](std::uint32_t req, wire::TypeWriter&) {
            return proto::encode(proto::OpenRequest{req, name});
        }, h, via);
    }

    StatePtr<Done> send_event_reg(const EventReg& r, const std::shared_ptr<Conn>& via) {
        auto st = make_state<Done>(shared_from_this());
        Handler h;
        h.reply = [st](const wire::Frame&, const wire::InboundTypes&) { fulfill<Done>(st, Done{}); };
        h.fail = [st](const Failure& f) { fulfill<Done>(st, f); };
        auto ch = r.channel;
        auto name = r.name;
        auto pred = r.predicate;
        issue(Command::event_reg, [ch, name, pred](std::uint32_t req, wire::TypeWriter&) {
            return proto::encode(proto::EventRegRequest{req, ch ? ch->server_id : 0, name, pred});
        }, h, via);
        return st;
    }

    void send_monitor(const std::shared_ptr<MonitorState>& m, bool initial, const StatePtr<std::shared_ptr<Monitor>>& st,
                      const std::shared_ptr<Conn>& via) {
        auto self = shared_from_this();
        Handler h;
        h.reply = [self, m, st](const wire::Frame&, const wire::InboundTypes&) {
            {
                std::lock_guard lock(self->mu);
                self->monitors[m->sub] = m;
            }
            fulfill<std::shared_ptr<Monitor>>(st, std::make_shared<Monitor>(m));
        };
        h.fail = [st](const Failure& f) { fulfill<std::shared_ptr<Monitor>>(st, f); };
        issue(Command::monitor_sub, [m, initial](std::uint32_t req, wire::TypeWriter&) {
            proto::MonitorRequest r;
            r.req = req;
            r.channel = m->channel->server_id;
            r.sub = m->sub;
            r.flags = initial ? 0 : proto::MonitorRequest::no_initial;
            r.kinds = m->options.events;
            r.paths = m->options.paths;
            return proto::encode(r);
        }, h, via);
    }

    void send_snapshot(const std::shared_ptr<SnapshotState>& s, bool initial,
                       const StatePtr<std::shared_ptr<SnapshotSubscription>>& st, const std::shared_ptr<Conn>& via) {
        auto self = shared_from_this();
        Handler h;
        h.reply = [self, s, st](const wire::Frame&, const wire::InboundTypes&) {
            {
                std::lock_guard lock(self->mu);
                self->snaps[s->sub] = s;
            }
            fulfill<std::shared_ptr<SnapshotSubscription>>(st, std::make_shared<SnapshotSubscription>(s));
        };
        h.fail = [st](const Failure& f) { fulfill<std::shared_ptr<SnapshotSubscription>>(st, f); };
        issue(Command::snap_sub, [s, initial](std::uint32_t req, wire::TypeWriter&) {
            proto::SnapshotRequest r;
            r.req = req;
            r.sub = s->sub;
            r.flags = initial ? proto::SnapshotRequest::with_initial : 0;
            r.spec = s->spec;
            return proto::encode(r);
        }, h, via);
    }

    Pending<CommitResult> put(const std::shared_ptr<ChannelState>& ch, Value v, CopyPolicy::Coercion coercion,
                              bool composite) {
        auto st = make_state<CommitResult>(shared_from_this());
        if (composite && (!v.is<Container>() || v.as_container().fields.empty())) {
            fulfill<CommitResult>(st, Failure{ErrorCode::invalid_argument, "empty composite"});
            return Pending<CommitResult>(st);
        }
        Handler h;
        h.reply = [st](const wire::Frame& f, const wire::InboundTypes&) {
            auto r = proto::decode_put_reply(f.payload);
            if (r.results.size() != 1) throw Error(ErrorCode::protocol, "PUT reply without a result");
            fulfill<CommitResult>(st, std::move(r.results[0]));
        };
        h.fail = [st](const Failure& f) { fulfill<CommitResult>(st, f); };
        issue(composite ? Command::put_composite : Command::put,
              [ch, v = std::move(v), coercion](std::uint32_t req, wire::TypeWriter& types) {
                  proto::PutRequest r;
                  r.req = req;
                  r.flags = coercion == CopyPolicy::Coercion::allow ? proto::PutRequest::coerce : 0;
                  r.parts.push_back({ch->server_id, partial_descriptor(ch->schema, v, ""), v});
                  return proto::encode(r, types);
              },
              h);
        return Pending<CommitResult>(st);
    }

    void close() {
        std::vector<Handler> failed_handlers;
        std::vector<OpenWait> failed_opens;
        std::shared_ptr<Conn> c;
        {
            std::lock_guard lock(mu);
            if (closing) return;
            closing = true;
            for (auto& [_, h] : pending) failed_handlers.push_back(std::move(h));
            pending.clear();
            failed_opens.swap(opening);
            c = conn;
            set_state_locked(SessionState::closed);
        }
        Failure f{ErrorCode::disconnected, "session closed"};
        for (auto& h : failed_handlers)
            if (h.fail) h.fail(f);
        for (auto& o : failed_opens) fulfill<Channel>(o.pending, f);
        if (c) c->stream->close();
        state_cv.notify_all();
        join_or_detach(supervisor);
        std::vector<std::shared_ptr<Conn>> conns;
        {
            std::lock_guard lock(mu);
            conns = retired;
            retired.clear();
            if (conn) conns.push_back(conn);
            conn.reset();
            monitors.clear();
            snaps.clear();
            channels.clear();
            event_regs.clear();
        }
        for (auto& cc : conns) {
            cc->stream->close();
            join_or_detach(cc->reader);
        }
        {
            std::lock_guard lock(dmu);
            dispatcher_stop = true;
        }
        dcv.notify_all();
        join_or_detach(dispatcher);
    }

    static void join_or_detach(std::thread& t) {
        if (!t.joinable()) return;
        if (t.get_id() == std::this_thread::get_id()) t.detach();
        else t.join();
    }
};

template <class T>
bool Feed<T>::push(Result<T> item) {
    bool ok = true;
    bool schedule = false;
    {
        std::lock_guard lock(mu);
        if (!accepting) return true;
        if (depth != 0 && queue.size() >= depth && item.ok()) {
            if (overflow == OverflowPolicy::conflate_latest) {
                conflated += queue.size();
                queue.clear();
                queue.push_back(std::move(item));
            } else {
                queue.push_back(Failure{ErrorCode::overflow, "delivery queue overflow"});
                accepting = false;
                ok = false;
            }
        } else {
            if (!item.ok()) accepting = false;
            queue.push_back(std::move(item));
        }
        if (!scheduled) schedule = scheduled = true;
    }
    if (schedule)
        if (auto s = session.lock()) s->post([self = this->shared_from_this()] { self->run_one(); });
    return ok;
}

template <class T>
void Feed<T>::run_one() {
    std::optional<Result<T>> item;
    {
        std::lock_guard lock(mu);
        if (cancelled || queue.empty()) {
            scheduled = false;
            return;
        }
        item.emplace(std::move(queue.front()));
        queue.pop_front();
    }
    callback(*item);
    bool again = false;
    {
        std::lock_guard lock(mu);
        ++delivered;
        if (!cancelled && !queue.empty()) again = true;
        else scheduled = false;
    }
    if (again)
        if (auto s = session.lock()) s->post([self = this->shared_from_this()] { self->run_one(); });
}

void PendingCore::complete() {
    std::function<void()> cont;
    {
        std::lock_guard lock(mu);
        cont = std::move(continuation);
        continuation = nullptr;
    }
    cv.notify_all();
    if (cont && session) session->post(std::move(cont));
}

void PendingCore::wait_done() {
    if (session) session->flush();
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return done; });
}

bool PendingCore::wait_done_for(std::chrono::milliseconds timeout) {
    if (session) session->flush();
    std::unique_lock lock(mu);
    return cv.wait_for(lock, timeout, [&] { return done; });
}

} // namespace detail

using detail::fulfill;
using detail::make_state;

// ---- Monitor / SnapshotSubscription

void Monitor::cancel() {
    state_->cancel();
    if (auto s = state_->session.lock()) s->drop_monitor(state_);
}
bool Monitor::active() const {
    std::lock_guard lock(state_->mu);
    return state_->accepting;
}
std::uint64_t Monitor::delivered() const {
    std::lock_guard lock(state_->mu);
    return state_->delivered;
}
std::uint64_t Monitor::conflated() const {
    std::lock_guard lock(state_->mu);
    return state_->conflated;
}

void SnapshotSubscription::cancel() {
    state_->cancel();
    auto s = state_->session.lock();
    if (!s) return;
    {
        std::lock_guard lock(s->mu);
        s->snaps.erase(state_->sub);
    }
    proto::SnapshotRequest r;
    r.sub = state_->sub;
    r.flags = proto::SnapshotRequest::cancel;
    s->issue(Command::snap_sub, [r](std::uint32_t req, wire::TypeWriter&) mutable {
        r.req = req;
        return proto::encode(r);
    }, {[](const wire::Frame&, const wire::InboundTypes&) {}, nullptr});
}
bool SnapshotSubscription::active() const {
    std::lock_guard lock(state_->mu);
    return state_->accepting;
}

// ---- Channel

const std::string& Channel::name() const { return state_->name; }

DescriptorPtr Channel::schema() const {
    std::lock_guard lock(state_->session->mu);
    return state_->schema;
}

std::vector<std::string> Channel::event_kinds() const {
    std::lock_guard lock(state_->session->mu);
    return state_->kinds;
}

Pending<Reading> Channel::get(std::vector<PropertyPath> paths) const {
    auto session = state_->session;
    auto st = make_state<Reading>(session);
    detail::SessionCore::Handler h;
    h.reply = [st](const wire::Frame& f, const wire::InboundTypes& in) {
        auto r = proto::decode_get_reply(f.payload, in);
        fulfill<Reading>(st, Reading{r.seq, r.type, std::move(r.value)});
    };
    h.fail = [st](const Failure& f) { fulfill<Reading>(st, f); };
    auto ch = state_;
    session->issue(Command::get, [ch, paths = std::move(paths)](std::uint32_t req, wire::TypeWriter&) {
        for (const auto& p : paths)
            if (ch->schema && !descriptor_at(ch->schema, p))
                throw Error(ErrorCode::absent_path, "no property '" + p.to_string() + "' on " + ch->name);
        return proto::encode(proto::GetRequest{req, ch->server_id, paths});
    }, h);
    return Pending<Reading>(st);
}

Pending<CommitResult> Channel::put(Value partial, CopyPolicy::Coercion coercion) const {
    return state_->session->put(state_, std::move(partial), coercion, false);
}

Pending<CommitResult> Channel::put_composite(Value composite, CopyPolicy::Coercion coercion) const {
    return state_->session->put(state_, std::move(composite), coercion, true);
}

Pending<std::shared_ptr<Monitor>> Channel::monitor(MonitorOptions options, MonitorCallback callback) const {
    auto session = state_->session;
    auto st = make_state<std::shared_ptr<Monitor>>(session);
    if (options.events.empty()) {
        fulfill<std::shared_ptr<Monitor>>(st, Failure{ErrorCode::invalid_argument, "no event kinds selected"});
        return Pending<std::shared_ptr<Monitor>>(st);
    }
    auto m = std::make_shared<detail::MonitorState>();
    m->session = session;
    m->callback = std::move(callback);
    m->depth = options.queue_depth;
    m->overflow = options.overflow;
    m->channel = state_;
    bool initial = options.initial;
    m->options = std::move(options);
    {
        std::lock_guard lock(session->mu);
        m->sub = session->next_sub++;
    }
    session->send_monitor(m, initial, st, nullptr);
    return Pending<std::shared_ptr<Monitor>>(st);
}

Pending<Done> Channel::register_event(std::string name, proto::PredicateSpec predicate) const {
    auto session = state_->session;
    detail::SessionCore::EventReg reg{state_, std::move(name), std::move(predicate)};
    auto st = session->send_event_reg(reg, nullptr);
    Pending<Done>(st).then([session, reg, ch = state_](const Result<Done>& r) {
        if (!r.ok()) return;
        std::lock_guard lock(session->mu);
        session->event_regs.push_back(reg);
        if (std::find(ch->kinds.begin(), ch->kinds.end(), reg.name) == ch->kinds.end()) ch->kinds.push_back(reg.name);
    });
    return Pending<Done>(st);
}

// ---- Session

Session::Session(std::shared_ptr<detail::SessionCore> core) : core_(std::move(core)) {}

Session::~Session() { close(); }

std::shared_ptr<Session> Session::create(std::string address, ClientOptions options) {
    auto core = std::make_shared<detail::SessionCore>(std::move(address), std::move(options));
    core->start();
    return std::shared_ptr<Session>(new Session(core));
}

SessionState Session::state() const {
    std::lock_guard lock(core_->mu);
    return core_->state;
}

const std::string& Session::address() const { return core_->address; }

bool Session::wait_up(std::chrono::milliseconds timeout) const {
    std::unique_lock lock(core_->mu);
    return core_->state_cv.wait_for(lock, timeout, [&] {
        return core_->state == SessionState::up || core_->state == SessionState::closed ||
               (!core_->opts.reconnect && core_->state == SessionState::down);
    }) && core_->state == SessionState::up;
}

Pending<Channel> Session::open(std::string pv) {
    auto st = make_state<Channel>(core_);
    auto ch = std::make_shared<detail::ChannelState>();
    ch->session = core_;
    ch->name = std::move(pv);
    std::shared_ptr<detail::Conn> via;
    bool closed = false;
    {
        std::lock_guard lock(core_->mu);
        if (core_->closing || (!core_->opts.reconnect && core_->state == SessionState::down)) {
            closed = true;
        } else {
            core_->opening.push_back({ch, st, 0});
            if (core_->state == SessionState::up) via = core_->conn;
        }
    }
    if (closed) fulfill<Channel>(st, Failure{ErrorCode::disconnected, "session is " + std::string(to_string(state()))});
    else if (via) core_->send_open(ch, st, via, true);
    return Pending<Channel>(st);
}

Pending<Done> Session::register_event(std::string name, proto::PredicateSpec predicate) {
    detail::SessionCore::EventReg reg{nullptr, std::move(name), std::move(predicate)};
    auto st = core_->send_event_reg(reg, nullptr);
    auto core = core_;
    Pending<Done>(st).then([core, reg](const Result<Done>& r) {
        if (!r.ok()) return;
        std::lock_guard lock(core->mu);
        core->event_regs.push_back(reg);
        for (auto& ch : core->channels)
            if (std::find(ch->kinds.begin(), ch->kinds.end(), reg.name) == ch->kinds.end()) ch->kinds.push_back(reg.name);
    });
    return Pending<Done>(st);
}

Pending<std::vector<CommitResult>> Session::put_group(std::vector<std::pair<Channel, Value>> parts,
                                                      CopyPolicy::Coercion coercion) {
    using R = std::vector<CommitResult>;
    auto st = make_state<R>(core_);
    if (parts.empty()) {
        fulfill<R>(st, Failure{ErrorCode::invalid_argument, "empty group composite"});
        return Pending<R>(st);
    }
    detail::SessionCore::Handler h;
    h.reply = [st](const wire::Frame& f, const wire::InboundTypes&) {
        fulfill<R>(st, proto::decode_put_reply(f.payload).results);
    };
    h.fail = [st](const Failure& f) { fulfill<R>(st, f); };
    core_->issue(Command::put_composite, [parts = std::move(parts), coercion](std::uint32_t req, wire::TypeWriter& types) {
        proto::PutRequest r;
        r.req = req;
        r.flags = coercion == CopyPolicy::Coercion::allow ? proto::PutRequest::coerce : 0;
        for (const auto& [ch, v] : parts) {
            const auto& cs = ch.state();
            if (!v.is<Container>() || v.as_container().fields.empty())
                throw Error(ErrorCode::invalid_argument, "empty composite for " + cs->name);
            r.parts.push_back({cs->server_id, detail::partial_descriptor(cs->schema, v, ""), v});
        }
        return proto::encode(r, types);
    }, h);
    return Pending<R>(st);
}

Pending<std::shared_ptr<SnapshotSubscription>> Session::snapshot_subscribe(SnapshotSpec spec, SnapshotCallback callback,
                                                                           SnapshotOptions options) {
    auto st = make_state<std::shared_ptr<SnapshotSubscription>>(core_);
    auto s = std::make_shared<detail::SnapshotState>();
    s->session = core_;
    s->callback = std::move(callback);
    s->spec = std::move(spec);
    {
        std::lock_guard lock(core_->mu);
        s->sub = core_->next_sub++;
    }
    core_->send_snapshot(s, options.initial, st, nullptr);
    return Pending<std::shared_ptr<SnapshotSubscription>>(st);
}

void Session::flush() { core_->flush(); }

transport::StreamStats Session::stats() const {
    std::lock_guard lock(core_->mu);
    auto out = core_->base_stats;
    if (core_->conn) {
        auto s = core_->conn->stream->stats();
        out.writes += s.writes;
        out.bytes_out += s.bytes_out;
        out.bytes_in += s.bytes_in;
    }
    return out;
}

void Session::close() { core_->close(); }

} // namespace pw
