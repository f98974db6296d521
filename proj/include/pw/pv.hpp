// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pw/data_source.hpp"
#include "pw/detail/lock_audit.hpp"
#include "pw/transform.hpp"
#include "pw/types.hpp"

namespace pw {

/// The fixed process-variable property set, in schema order.
enum class BuiltinProperty {
    name,
    class_name,
    data_type,
    vector_dimension,
    value,
    time_stamp,
    units,
    enum_labels,
    display_limits,
    control_limits,
    alarm_limits,
    alarm_condition,
    alarm_ack_transient,
    alarm_ack_severity,
    precision,
};

inline constexpr std::array<BuiltinProperty, 15> builtin_properties = {
    BuiltinProperty::name,           BuiltinProperty::class_name,          BuiltinProperty::data_type,
    BuiltinProperty::vector_dimension, BuiltinProperty::value,             BuiltinProperty::time_stamp,
    BuiltinProperty::units,          BuiltinProperty::enum_labels,         BuiltinProperty::display_limits,
    BuiltinProperty::control_limits, BuiltinProperty::alarm_limits,        BuiltinProperty::alarm_condition,
    BuiltinProperty::alarm_ack_transient, BuiltinProperty::alarm_ack_severity, BuiltinProperty::precision,
};

std::string_view property_name(BuiltinProperty p) noexcept;

/// Descriptor a built-in must have. `value` has no fixed type and yields
/// `value_type`.
DescriptorPtr builtin_descriptor(BuiltinProperty p, const DescriptorPtr& value_type);

/// The full built-in container around a value type, followed by `extra`.
DescriptorPtr table1_schema(DescriptorPtr value_type = TypeDescriptor::scalar(TypeCode::f64),
                            std::vector<FieldDescriptor> extra = {});

enum class Severity : std::uint8_t { none = 0, minor = 1, major = 2, invalid = 3 };

std::string_view to_string(Severity s) noexcept;
DescriptorPtr severity_descriptor();

struct AlarmState {
    Severity severity = Severity::none;
    std::uint16_t condition = 0;
    std::string message;
    /// True while an unacknowledged, higher severity has already cleared.
    bool ack_transient = false;
    /// Highest severity raised since the last acknowledge.
    Severity ack_severity = Severity::none;
};

inline constexpr std::string_view value_change_default = "value_change_default";
inline constexpr std::string_view value_change_archive = "value_change_archive";
inline constexpr std::string_view alarm_change = "alarm_change";
inline constexpr std::array<std::string_view, 3> builtin_event_kinds = {value_change_default, value_change_archive,
                                                                        alarm_change};

bool is_builtin_event(std::string_view name) noexcept;

/// Pure function of the state before and after a commit. Evaluated inside
/// the update's exclusive section, so it must not block or call back into
/// the library.
using EventPredicate = std::function<bool(const Value& previous, const Value& current)>;

struct EventKind {
    std::string name;
    bool builtin = false;
    EventPredicate predicate;
};

/// Nanoseconds since the Unix epoch.
using Timestamp = std::int64_t;
Timestamp now_ns() noexcept;

/// |candidate - last| > band, or true when nothing was posted yet.
bool evaluate_deadband(std::optional<double> last_posted, double candidate, double band) noexcept;

struct CommitResult {
    bool committed = false;
    std::uint64_t seq = 0;
    std::vector<std::string> fired;

    bool fired_kind(std::string_view kind) const noexcept;
};

struct PvOptions {
    double dead_band = 0.0;
    double archive_dead_band = 0.0;
};

struct SnapshotMember {
    std::string pv;
    PropertyPath path;
};

struct SnapshotSpec {
    std::string trigger_pv;
    std::string trigger_event;
    std::vector<SnapshotMember> members;
};

struct Snapshot {
    std::uint64_t seq_tag = 0;
    Projection members;
};

struct SnapshotCapture {
    std::uint64_t trigger_id = 0;
    Snapshot snapshot;
};

/// One committed update as seen by commit-stream consumers.
struct CommitEvent {
    std::string pv;
    std::uint64_t pv_seq = 0;
    std::uint64_t node_seq = 0;
    std::vector<std::string> fired;
    DescriptorPtr schema;
    Value state;
    std::vector<SnapshotCapture> snapshots;
};

/// FIFO of commit events. Commits are pushed inside the update section and
/// consumed outside of it.
class CommitQueue {
public:
    void push(CommitEvent e);
    std::optional<CommitEvent> pop(std::chrono::milliseconds timeout);
    std::vector<CommitEvent> drain();
    void close();
    bool closed() const;

private:
    mutable detail::TrackedMutex mutex_;
    std::condition_variable_any cv_;
    std::deque<CommitEvent> events_;
    bool closed_ = false;
};

namespace detail {
struct NodeCore;
}

/// A named endpoint holding a property container with every built-in, any
/// application-defined properties, alarm state, dead bands and an update
/// counter. All mutations are serialized internally.
class ProcessVariable {
public:
    /// schema must be a valid container containing `value` and `time_stamp`.
    /// Missing built-ins are appended; present ones must have the built-in
    /// descriptor. `initial` is a partial container applied over defaults.
    static std::shared_ptr<ProcessVariable> create(std::string name, const DescriptorPtr& schema,
                                                   const Value& initial = Value(), PvOptions options = {});

    const std::string& name() const noexcept { return name_; }
    const DescriptorPtr& schema() const noexcept { return schema_; }

    std::uint64_t seq() const;
    Value state() const;
    AlarmState alarm() const;
    /// Consistent copy of the properties as a self-contained source.
    GenericSource properties() const;
    /// Reads the selected paths in one consistent view, with the seq they
    /// reflect.
    std::pair<std::uint64_t, Projection> read(std::span<const PropertyPath> paths) const;

    double dead_band() const;
    double archive_dead_band() const;
    void set_dead_band(double band);
    void set_archive_dead_band(double band);

    /// Applies a partial container in one exclusive section. Time stamp is
    /// set to `ts` unless the update carries its own.
    CommitResult post(const Value& updates, Timestamp ts = now_ns(),
                      CopyPolicy::Coercion coercion = CopyPolicy::Coercion::forbid);

    /// As post(), but an empty composite is an error.
    CommitResult apply_composite(const Value& composite, Timestamp ts = now_ns(),
                                 CopyPolicy::Coercion coercion = CopyPolicy::Coercion::forbid);

    /// Fires alarm_change only when severity or condition code changes;
    /// otherwise nothing is committed.
    CommitResult set_alarm(Severity severity, std::uint16_t condition, std::string message = {},
                           Timestamp ts = now_ns());

    /// Clears the acknowledge latch when `severity` covers it.
    CommitResult acknowledge(Severity severity, Timestamp ts = now_ns());

    /// Registers a PV-scoped event kind. Throws duplicate_name on collision
    /// with a built-in or any registered kind visible here.
    void register_event_kind(std::string name, EventPredicate predicate);
    bool has_event_kind(std::string_view name) const;
    std::vector<std::string> event_kinds() const;

    ProcessVariable(const ProcessVariable&) = delete;
    ProcessVariable& operator=(const ProcessVariable&) = delete;
    ~ProcessVariable();

private:
    friend class Database;
    friend struct detail::NodeCore;

    ProcessVariable(std::string name, DescriptorPtr schema, Value state, PvOptions options,
                    std::shared_ptr<detail::NodeCore> core);
    static std::shared_ptr<ProcessVariable> make(std::string name, const DescriptorPtr& schema, const Value& initial,
                                                 PvOptions options, std::shared_ptr<detail::NodeCore> core);

    struct Staged {
        Value next;
        bool value_written = false;
        bool alarm_changed = false;
    };
    /// Returns nothing when there is nothing to commit.
    using Stager = std::function<std::optional<Staged>(const Value& current)>;

    CommitResult commit(const Stager& stage);
    Staged stage_post(const Value& current, const Value& updates, Timestamp ts, CopyPolicy::Coercion coercion) const;
    /// Caller holds mutex_ exclusively.
    CommitResult finish_locked(Staged staged);

    std::string name_;
    DescriptorPtr schema_;
    std::shared_ptr<detail::NodeCore> core_;

    mutable detail::TrackedSharedMutex mutex_;
    Value state_;
    std::uint64_t seq_ = 0;
    PvOptions options_;
    std::map<std::string, std::optional<Value>, std::less<>> last_posted_;
    std::vector<EventKind> kinds_;
    int trigger_refs_ = 0;
};

/// The set of PVs served by one node. Provides the node-wide update
/// counter, node-scoped event kinds, multi-PV group composites, sequence
/// tagged snapshots and the commit stream that drives subscriptions.
class Database {
public:
    Database();
    ~Database();

    std::shared_ptr<ProcessVariable> add(std::string name, const DescriptorPtr& schema, const Value& initial = Value(),
                                         PvOptions options = {});
    std::shared_ptr<ProcessVariable> find(std::string_view name) const;
    /// Throws unknown_pv.
    std::shared_ptr<ProcessVariable> get(std::string_view name) const;
    std::vector<std::string> names() const;
    std::size_t size() const;

    std::uint64_t node_seq() const;

    /// Registers a kind visible on every PV of this node.
    void register_event_kind(std::string name, EventPredicate predicate);

    /// All fields of every PV are applied under node-wide exclusion with a
    /// single node counter increment. Throws without modifying anything when
    /// any part does not conform.
    std::vector<CommitResult> group_composite(const std::vector<std::pair<std::string, Value>>& parts,
                                              Timestamp ts = now_ns(),
                                              CopyPolicy::Coercion coercion = CopyPolicy::Coercion::forbid);

    /// Reads every member under node-wide exclusion.
    Snapshot snapshot(const SnapshotSpec& spec) const;

    /// Captures the members inside every commit on which the trigger fires;
    /// captures ride along on the commit event.
    std::uint64_t add_snapshot_trigger(const SnapshotSpec& spec);
    void remove_snapshot_trigger(std::uint64_t id);

    /// Every commit after this call is pushed to the returned queue until
    /// it is released.
    std::shared_ptr<CommitQueue> subscribe_commits();

private:
    std::shared_ptr<detail::NodeCore> core_;
};

} // namespace pw
