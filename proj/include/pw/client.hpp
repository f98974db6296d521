// SPDX-License-Identifier: Apache-2.0
#pragma once

// Client side of the node protocol. Every remote operation returns at once
// with a Pending<T>. Completions, monitor deliveries and state changes run
// on one dispatch thread per session, one at a time and in order, with no
// library lock held; callbacks may issue further operations.

#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pw/protocol.hpp"
#include "pw/transport.hpp"
#include "pw/wire.hpp"

namespace pw {

enum class SessionState { connecting, up, down, closed };
std::string_view to_string(SessionState s) noexcept;

struct ClientOptions {
    /// ECHO interval. The session goes down once nothing has arrived for
    /// heartbeat * heartbeat_misses.
    std::chrono::milliseconds heartbeat{5000};
    int heartbeat_misses = 2;
    std::chrono::milliseconds connect_timeout{2000};
    std::chrono::milliseconds reconnect_delay{250};
    bool reconnect = true;
    /// With batching off every frame is written immediately.
    bool batching = true;
    std::size_t batch_threshold = wire::default_batch_threshold;
    /// Pending frames are written at least this often.
    std::chrono::milliseconds flush_interval{5};
    /// Prints every frame in both directions to stderr.
    bool dump_frames = false;
    std::string peer_name = "pw-client";
    /// Called on the dispatch thread for every transition, in order.
    std::function<void(SessionState)> on_state;
    /// Connection failures and session-level ERROR frames.
    std::function<void(const Failure&)> on_error;
};

namespace detail {
class SessionCore;
struct ChannelState;
struct MonitorState;
struct SnapshotState;

struct PendingCore {
    TrackedMutex mu;
    std::condition_variable_any cv;
    std::shared_ptr<SessionCore> session;
    bool done = false;
    std::function<void()> continuation;
    void complete();
    void wait_done();
    bool wait_done_for(std::chrono::milliseconds timeout);
};
} // namespace detail

/// Completion of one asynchronous operation.
template <class T>
class Pending {
public:
    Pending() = default;

    bool ready() const {
        std::lock_guard lock(state_->core.mu);
        return state_->core.done;
    }

    /// Flushes pending frames, then blocks until completion.
    const Result<T>& wait() const {
        state_->core.wait_done();
        return *state_->result;
    }

    /// Null when the deadline passes first. The operation stays pending.
    const Result<T>* wait_for(std::chrono::milliseconds timeout) const {
        if (!state_->core.wait_done_for(timeout)) return nullptr;
        return &*state_->result;
    }

    /// Runs `fn` on the dispatch thread once complete. One continuation per
    /// operation.
    void then(std::function<void(const Result<T>&)> fn) const {
        auto st = state_;
        std::unique_lock lock(st->core.mu);
        st->core.continuation = [st, fn = std::move(fn)] { fn(*st->result); };
        if (st->core.done) {
            lock.unlock();
            st->core.complete();
        }
    }

    /// Producer side.
    struct State {
        detail::PendingCore core;
        std::optional<Result<T>> result;
    };
    explicit Pending(std::shared_ptr<State> s) : state_(std::move(s)) {}
    const std::shared_ptr<State>& state() const noexcept { return state_; }

private:
    std::shared_ptr<State> state_;
};

struct Reading {
    std::uint64_t seq = 0;
    DescriptorPtr type;
    Value value;
};

struct MonitorDelivery {
    std::uint64_t seq = 0;
    Timestamp time_stamp = 0;
    bool initial = false;
    std::vector<std::string> fired;
    DescriptorPtr type;
    Value value;
};

struct SnapshotDelivery {
    std::uint64_t seq_tag = 0;
    bool initial = false;
    DescriptorPtr type;
    Value value;
};

enum class OverflowPolicy { conflate_latest, error };

struct MonitorOptions {
    std::vector<std::string> events{std::string(value_change_default)};
    /// Properties delivered on each event; empty selects everything.
    std::vector<PropertyPath> paths;
    /// Undelivered events kept per monitor; 0 is unbounded.
    std::size_t queue_depth = 64;
    OverflowPolicy overflow = OverflowPolicy::conflate_latest;
    bool initial = true;
};

using MonitorCallback = std::function<void(const Result<MonitorDelivery>&)>;
using SnapshotCallback = std::function<void(const Result<SnapshotDelivery>&)>;

class Monitor {
public:
    explicit Monitor(std::shared_ptr<detail::MonitorState> s) : state_(std::move(s)) {}
    /// Stops deliveries; queued ones are discarded.
    void cancel();
    bool active() const;
    std::uint64_t delivered() const;
    /// Deliveries dropped by conflation.
    std::uint64_t conflated() const;

private:
    std::shared_ptr<detail::MonitorState> state_;
};

class SnapshotSubscription {
public:
    explicit SnapshotSubscription(std::shared_ptr<detail::SnapshotState> s) : state_(std::move(s)) {}
    void cancel();
    bool active() const;

private:
    std::shared_ptr<detail::SnapshotState> state_;
};

/// A client's handle to one PV. Survives reconnects; the schema is
/// refreshed on each re-open.
class Channel {
public:
    Channel() = default;
    explicit Channel(std::shared_ptr<detail::ChannelState> s) : state_(std::move(s)) {}

    const std::string& name() const;
    DescriptorPtr schema() const;
    std::vector<std::string> event_kinds() const;

    /// Empty paths read everything.
    Pending<Reading> get(std::vector<PropertyPath> paths = {}) const;
    /// Completes once the server committed the update as one post.
    Pending<CommitResult> put(Value partial, CopyPolicy::Coercion coercion = CopyPolicy::Coercion::forbid) const;
    /// Atomic multi-field write; an empty container is rejected.
    Pending<CommitResult> put_composite(Value composite,
                                        CopyPolicy::Coercion coercion = CopyPolicy::Coercion::forbid) const;
    Pending<std::shared_ptr<Monitor>> monitor(MonitorOptions options, MonitorCallback callback) const;
    /// Registers a kind on this PV.
    Pending<Done> register_event(std::string name, proto::PredicateSpec predicate) const;

    explicit operator bool() const noexcept { return state_ != nullptr; }
    const std::shared_ptr<detail::ChannelState>& state() const noexcept { return state_; }

private:
    std::shared_ptr<detail::ChannelState> state_;
};

struct SnapshotOptions {
    /// Deliver the current member state on subscription.
    bool initial = false;
};

class Session {
public:
    /// Starts connecting in the background.
    static std::shared_ptr<Session> create(std::string address, ClientOptions options = {});
    ~Session();
    Session(const Session&) = delete;
    Session& operator=(const Session&) = delete;

    SessionState state() const;
    const std::string& address() const;
    /// True once up; false on timeout, close, or a failed attempt when
    /// reconnecting is off.
    bool wait_up(std::chrono::milliseconds timeout) const;

    /// Queued while the session is not up; completes after (re)connection.
    Pending<Channel> open(std::string pv);
    /// Node-scoped event kind, replayed on reconnect.
    Pending<Done> register_event(std::string name, proto::PredicateSpec predicate);
    /// Commits parts on several PVs of the node under node-wide exclusion.
    Pending<std::vector<CommitResult>> put_group(std::vector<std::pair<Channel, Value>> parts,
                                                 CopyPolicy::Coercion coercion = CopyPolicy::Coercion::forbid);
    Pending<std::shared_ptr<SnapshotSubscription>> snapshot_subscribe(SnapshotSpec spec, SnapshotCallback callback,
                                                                      SnapshotOptions options = {});

    /// Writes every pending frame now.
    void flush();
    /// Byte and write counters summed over every connection so far.
    transport::StreamStats stats() const;
    /// Fails everything pending and stops all threads. Idempotent.
    void close();

    const std::shared_ptr<detail::SessionCore>& core() const noexcept { return core_; }

private:
    explicit Session(std::shared_ptr<detail::SessionCore> core);
    std::shared_ptr<detail::SessionCore> core_;
};

} // namespace pw
