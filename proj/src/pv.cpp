// SPDX-License-Identifier: Apache-2.0
#include "pw/pv.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <set>
#include <shared_mutex>

namespace pw {

std::string_view property_name(BuiltinProperty p) noexcept {
    switch (p) {
    case BuiltinProperty::name: return "name";
    case BuiltinProperty::class_name: return "class";
    case BuiltinProperty::data_type: return "data_type";
    case BuiltinProperty::vector_dimension: return "vector_dimension";
    case BuiltinProperty::value: return "value";
    case BuiltinProperty::time_stamp: return "time_stamp";
    case BuiltinProperty::units: return "units";
    case BuiltinProperty::enum_labels: return "enum_labels";
    case BuiltinProperty::display_limits: return "display_limits";
    case BuiltinProperty::control_limits: return "control_limits";
    case BuiltinProperty::alarm_limits: return "alarm_limits";
    case BuiltinProperty::alarm_condition: return "alarm_condition";
    case BuiltinProperty::alarm_ack_transient: return "alarm_ack_transient";
    case BuiltinProperty::alarm_ack_severity: return "alarm_ack_severity";
    case BuiltinProperty::precision: return "precision";
    }
    return "";
}

std::string_view to_string(Severity s) noexcept {
    switch (s) {
    case Severity::none: return "none";
    case Severity::minor: return "minor";
    case Severity::major: return "major";
    case Severity::invalid: return "invalid";
    }
    return "invalid";
}

DescriptorPtr severity_descriptor() {
    static const auto d = DescriptorPool::global().intern(TypeDescriptor::enumerated({"none", "minor", "major", "invalid"}));
    return d;
}

namespace {

DescriptorPtr limits_descriptor() {
    static const auto d = DescriptorPool::global().intern(TypeDescriptor::container({
        {"low", TypeDescriptor::scalar(TypeCode::f64), {}},
        {"high", TypeDescriptor::scalar(TypeCode::f64), {}},
    }));
    return d;
}

DescriptorPtr alarm_condition_descriptor() {
    static const auto d = DescriptorPool::global().intern(TypeDescriptor::container({
        {"severity", severity_descriptor(), {}},
        {"status", TypeDescriptor::scalar(TypeCode::u16), {}},
        {"message", TypeDescriptor::scalar(TypeCode::string), {}},
    }));
    return d;
}

bool read_only_builtin(std::string_view name) {
    return name == "name" || name == "alarm_condition" || name == "alarm_ack_transient" ||
           name == "alarm_ack_severity";
}

} // namespace

DescriptorPtr builtin_descriptor(BuiltinProperty p, const DescriptorPtr& value_type) {
    switch (p) {
    case BuiltinProperty::name:
    case BuiltinProperty::class_name:
    case BuiltinProperty::data_type:
    case BuiltinProperty::units: return TypeDescriptor::scalar(TypeCode::string);
    case BuiltinProperty::vector_dimension: return TypeDescriptor::scalar(TypeCode::u32);
    case BuiltinProperty::value: return value_type;
    case BuiltinProperty::time_stamp: return TypeDescriptor::scalar(TypeCode::i64);
    case BuiltinProperty::enum_labels: {
        static const auto d =
            DescriptorPool::global().intern(TypeDescriptor::array(TypeDescriptor::scalar(TypeCode::string), 1));
        return d;
    }
    case BuiltinProperty::display_limits:
    case BuiltinProperty::control_limits:
    case BuiltinProperty::alarm_limits: return limits_descriptor();
    case BuiltinProperty::alarm_condition: return alarm_condition_descriptor();
    case BuiltinProperty::alarm_ack_transient: return TypeDescriptor::scalar(TypeCode::boolean);
    case BuiltinProperty::alarm_ack_severity: return severity_descriptor();
    case BuiltinProperty::precision: return TypeDescriptor::scalar(TypeCode::i16);
    }
    return nullptr;
}

DescriptorPtr table1_schema(DescriptorPtr value_type, std::vector<FieldDescriptor> extra) {
    std::vector<FieldDescriptor> fields;
    for (auto p : builtin_properties) fields.push_back({std::string(property_name(p)), builtin_descriptor(p, value_type), {}});
    for (auto& f : extra) fields.push_back(std::move(f));
    return TypeDescriptor::container(std::move(fields));
}

bool is_builtin_event(std::string_view name) noexcept {
    return std::find(builtin_event_kinds.begin(), builtin_event_kinds.end(), name) != builtin_event_kinds.end();
}

Timestamp now_ns() noexcept {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

bool evaluate_deadband(std::optional<double> last_posted, double candidate, double band) noexcept {
    if (!last_posted) return true;
    return std::fabs(candidate - *last_posted) > band;
}

bool CommitResult::fired_kind(std::string_view kind) const noexcept {
    return std::find(fired.begin(), fired.end(), kind) != fired.end();
}

// ---------------------------------------------------------------------------
// CommitQueue

void CommitQueue::push(CommitEvent e) {
    {
        std::lock_guard lock(mutex_);
        if (closed_) return;
        events_.push_back(std::move(e));
    }
    cv_.notify_one();
}

std::optional<CommitEvent> CommitQueue::pop(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mutex_);
    cv_.wait_for(lock, timeout, [&] { return !events_.empty() || closed_; });
    if (events_.empty()) return std::nullopt;
    auto e = std::move(events_.front());
    events_.pop_front();
    return e;
}

std::vector<CommitEvent> CommitQueue::drain() {
    std::lock_guard lock(mutex_);
    std::vector<CommitEvent> out(std::make_move_iterator(events_.begin()), std::make_move_iterator(events_.end()));
    events_.clear();
    return out;
}

void CommitQueue::close() {
    {
        std::lock_guard lock(mutex_);
        closed_ = true;
    }
    cv_.notify_all();
}

bool CommitQueue::closed() const {
    std::lock_guard lock(mutex_);
    return closed_;
}

// ---------------------------------------------------------------------------
// Node core

namespace detail {

struct Trigger {
    SnapshotSpec spec;
    std::vector<std::shared_ptr<ProcessVariable>> member_pvs;
    std::shared_ptr<ProcessVariable> trigger_pv;
};

struct NodeCore {
    /// Shared by single-PV updates, exclusive for snapshots, group
    /// composites, trigger PV updates and registrations.
    mutable TrackedSharedMutex node_mutex;
    std::atomic<std::uint64_t> node_seq{0};

    mutable TrackedMutex table_mutex;
    std::map<std::string, std::shared_ptr<ProcessVariable>, std::less<>> pvs;

    // Guarded by node_mutex.
    std::vector<EventKind> node_kinds;
    std::map<std::uint64_t, Trigger> triggers;
    std::uint64_t next_trigger = 1;

    TrackedMutex queues_mutex;
    std::vector<std::weak_ptr<CommitQueue>> queues;
    std::atomic<bool> has_queues{false};

    std::shared_ptr<ProcessVariable> lookup(std::string_view name) const {
        std::lock_guard lock(table_mutex);
        auto it = pvs.find(name);
        return it == pvs.end() ? nullptr : it->second;
    }

    void publish(std::vector<CommitEvent> events) {
        std::lock_guard lock(queues_mutex);
        std::size_t live = 0;
        for (auto& w : queues) {
            if (auto q = w.lock()) {
                ++live;
                for (const auto& e : events) q->push(e);
            }
        }
        if (live != queues.size()) {
            std::erase_if(queues, [](const auto& w) { return w.expired(); });
            has_queues = !queues.empty();
        }
    }

    /// Caller holds node_mutex exclusively, so no writer can be active and
    /// member states are read without their own locks.
    Snapshot capture(const SnapshotSpec& spec, const std::vector<std::shared_ptr<ProcessVariable>>& member_pvs) const;
    std::vector<SnapshotCapture> capture_fired(std::string_view pv, const std::vector<std::string>& fired) const;

    bool kind_known(const ProcessVariable& pv, std::string_view kind) const;
};

} // namespace detail

// ---------------------------------------------------------------------------
// ProcessVariable

ProcessVariable::ProcessVariable(std::string name, DescriptorPtr schema, Value state, PvOptions options,
                                 std::shared_ptr<detail::NodeCore> core)
    : name_(std::move(name)),
      schema_(std::move(schema)),
      core_(std::move(core)),
      state_(std::move(state)),
      options_(options) {
    for (auto k : builtin_event_kinds) last_posted_[std::string(k)] = std::nullopt;
}

ProcessVariable::~ProcessVariable() = default;

namespace {

DescriptorPtr effective_schema(const DescriptorPtr& schema) {
    if (!schema || schema->code() != TypeCode::container)
        throw Error(ErrorCode::invalid_descriptor, "a PV schema must be a container");
    ensure_valid(*schema);
    for (auto mandatory : {"value", "time_stamp"})
        if (!schema->field(mandatory))
            throw Error(ErrorCode::invalid_descriptor, std::string("PV schema lacks mandatory field '") + mandatory + "'");
    auto value_type = schema->field("value")->type;
    std::vector<FieldDescriptor> fields = schema->fields();
    for (auto p : builtin_properties) {
        auto name = property_name(p);
        auto expected = builtin_descriptor(p, value_type);
        if (auto* f = schema->field(name)) {
            if (!same_shape(f->type, expected))
                throw Error(ErrorCode::invalid_descriptor,
                            "built-in '" + std::string(name) + "' must be " + signature(*expected));
        } else {
            fields.push_back({std::string(name), expected, {}});
        }
    }
    auto d = TypeDescriptor::container(std::move(fields));
    ensure_valid(*d);
    return DescriptorPool::global().intern(d);
}

void merge(Value& target, const TypeDescriptor& d, const Value& update, const PropertyPath& path,
           CopyPolicy::Coercion coercion, bool enforce_read_only = true) {
    if (!update.is<Container>())
        throw Error(ErrorCode::type_mismatch, "update for '" + path.to_string() + "' must be a container");
    for (const auto& f : update.as_container().fields) {
        auto sub = path.child(f.name);
        auto* fd = d.field(f.name);
        if (!fd) throw Error(ErrorCode::absent_path, "'" + sub.to_string() + "' is not a property");
        if (enforce_read_only && path.is_root() && read_only_builtin(f.name))
            throw Error(ErrorCode::access, "'" + f.name + "' cannot be written directly");
        auto* tv = target.as_container().find(f.name);
        if (fd->type->code() == TypeCode::container && f.value.is<Container>()) {
            merge(*tv, *fd->type, f.value, sub, coercion, enforce_read_only);
            continue;
        }
        std::string why;
        if (conforms(f.value, *fd->type, &why)) {
            *tv = f.value;
            continue;
        }
        if (coercion == CopyPolicy::Coercion::allow && is_scalar_kind(f.value.code()) &&
            is_scalar_kind(fd->type->code()) && f.value.code() != TypeCode::enumerated) {
            *tv = convert(f.value, *TypeDescriptor::scalar(f.value.code()), *fd->type).value;
            continue;
        }
        throw Error(ErrorCode::type_mismatch, "'" + sub.to_string() + "': " + why);
    }
}

Value alarm_value(Severity s, std::uint16_t code, std::string message) {
    return Value::container({{"severity", Value::enumerated(static_cast<std::uint16_t>(s))},
                             {"status", code},
                             {"message", std::move(message)}});
}

AlarmState alarm_of(const Value& state) {
    AlarmState a;
    const auto& cond = state.as_container().find("alarm_condition")->as_container();
    a.severity = static_cast<Severity>(cond.find("severity")->get<EnumIndex>().index);
    a.condition = cond.find("status")->get<std::uint16_t>();
    a.message = cond.find("message")->get<std::string>();
    a.ack_transient = state.as_container().find("alarm_ack_transient")->get<bool>();
    a.ack_severity = static_cast<Severity>(state.as_container().find("alarm_ack_severity")->get<EnumIndex>().index);
    return a;
}

void store_alarm(Value& state, const AlarmState& a) {
    auto& c = state.as_container();
    *c.find("alarm_condition") = alarm_value(a.severity, a.condition, a.message);
    *c.find("alarm_ack_transient") = Value(a.ack_transient);
    *c.find("alarm_ack_severity") = Value::enumerated(static_cast<std::uint16_t>(a.ack_severity));
}

} // namespace

namespace {

Value initial_state(const std::string& name, const DescriptorPtr& schema, const Value& initial) {
    auto state = default_value(*schema);
    auto& c = state.as_container();
    const auto& value_type = schema->field("value")->type;
    *c.find("name") = Value(name);
    *c.find("data_type") = Value(std::string(code_name(value_type->code())));
    *c.find("vector_dimension") =
        Value(static_cast<std::uint32_t>(value_type->code() == TypeCode::array ? value_type->declared_rank() : 0));
    // Initial values may seed otherwise read-only built-ins.
    merge(state, *schema, initial, PropertyPath(), CopyPolicy::Coercion::allow, false);
    ensure_conforms(state, *schema);
    return state;
}
} // namespace

std::shared_ptr<ProcessVariable> ProcessVariable::create(std::string name, const DescriptorPtr& schema,
                                                         const Value& initial, PvOptions options) {
    return make(std::move(name), schema, initial, options, std::make_shared<detail::NodeCore>());
}

std::shared_ptr<ProcessVariable> ProcessVariable::make(std::string name, const DescriptorPtr& schema,
                                                       const Value& initial, PvOptions options,
                                                       std::shared_ptr<detail::NodeCore> core) {
    if (!is_valid_name(name)) throw Error(ErrorCode::invalid_argument, "invalid PV name '" + name + "'");
    if (!(options.dead_band >= 0.0) || !(options.archive_dead_band >= 0.0))
        throw Error(ErrorCode::invalid_argument, "dead bands must be >= 0");
    auto full = effective_schema(schema);
    auto state = initial_state(name, full, initial);
    return std::shared_ptr<ProcessVariable>(
        new ProcessVariable(std::move(name), std::move(full), std::move(state), options, std::move(core)));
}

std::uint64_t ProcessVariable::seq() const {
    std::shared_lock lock(mutex_);
    return seq_;
}

Value ProcessVariable::state() const {
    std::shared_lock lock(mutex_);
    return state_;
}

AlarmState ProcessVariable::alarm() const {
    std::shared_lock lock(mutex_);
    return alarm_of(state_);
}

GenericSource ProcessVariable::properties() const {
    std::shared_lock lock(mutex_);
    return GenericSource(schema_, state_);
}

namespace {

Projection project_value(const DescriptorPtr& schema, const Value& state, std::span<const PropertyPath> paths) {
    Projection p;
    p.descriptor = projection_descriptor(schema, paths);
    std::vector<Field> fields;
    fields.reserve(paths.size());
    for (const auto& path : paths) fields.push_back({path.flattened(), *state.find(path)});
    p.value = Value::container(std::move(fields));
    return p;
}

} // namespace

std::pair<std::uint64_t, Projection> ProcessVariable::read(std::span<const PropertyPath> paths) const {
    std::shared_lock lock(mutex_);
    return {seq_, project_value(schema_, state_, paths)};
}

double ProcessVariable::dead_band() const {
    std::shared_lock lock(mutex_);
    return options_.dead_band;
}

double ProcessVariable::archive_dead_band() const {
    std::shared_lock lock(mutex_);
    return options_.archive_dead_band;
}

void ProcessVariable::set_dead_band(double band) {
    if (!(band >= 0.0)) throw Error(ErrorCode::invalid_argument, "dead band must be >= 0");
    std::unique_lock lock(mutex_);
    options_.dead_band = band;
}

void ProcessVariable::set_archive_dead_band(double band) {
    if (!(band >= 0.0)) throw Error(ErrorCode::invalid_argument, "dead band must be >= 0");
    std::unique_lock lock(mutex_);
    options_.archive_dead_band = band;
}

ProcessVariable::Staged ProcessVariable::stage_post(const Value& current, const Value& updates, Timestamp ts,
                                                    CopyPolicy::Coercion coercion) const {
    Staged s{current};
    merge(s.next, *schema_, updates, PropertyPath(), coercion);
    if (!updates.as_container().find("time_stamp")) *s.next.as_container().find("time_stamp") = Value(ts);
    s.value_written = updates.as_container().find("value") != nullptr;
    return s;
}

CommitResult ProcessVariable::post(const Value& updates, Timestamp ts, CopyPolicy::Coercion coercion) {
    return commit([&](const Value& current) { return std::optional(stage_post(current, updates, ts, coercion)); });
}

CommitResult ProcessVariable::apply_composite(const Value& composite, Timestamp ts, CopyPolicy::Coercion coercion) {
    if (!composite.is<Container>() || composite.as_container().fields.empty())
        throw Error(ErrorCode::invalid_argument, "a composite must be a non-empty container");
    return post(composite, ts, coercion);
}

CommitResult ProcessVariable::set_alarm(Severity severity, std::uint16_t condition, std::string message,
                                        Timestamp ts) {
    if (static_cast<unsigned>(severity) > static_cast<unsigned>(Severity::invalid))
        throw Error(ErrorCode::invalid_argument, "invalid severity");
    return commit([&](const Value& current) -> std::optional<Staged> {
        auto a = alarm_of(current);
        if (a.severity == severity && a.condition == condition) return std::nullopt;
        a.severity = severity;
        a.condition = condition;
        a.message = message;
        a.ack_severity = std::max(a.ack_severity, severity);
        a.ack_transient = a.ack_severity > a.severity;
        Staged s{current};
        store_alarm(s.next, a);
        *s.next.as_container().find("time_stamp") = Value(ts);
        s.alarm_changed = true;
        return s;
    });
}

CommitResult ProcessVariable::acknowledge(Severity severity, Timestamp ts) {
    return commit([&](const Value& current) -> std::optional<Staged> {
        auto a = alarm_of(current);
        if (a.ack_severity == Severity::none || severity < a.ack_severity) return std::nullopt;
        a.ack_severity = Severity::none;
        a.ack_transient = false;
        Staged s{current};
        store_alarm(s.next, a);
        *s.next.as_container().find("time_stamp") = Value(ts);
        return s;
    });
}

CommitResult ProcessVariable::finish_locked(Staged staged) {
    CommitResult r;
    r.committed = true;
    r.seq = ++seq_;
    Value previous = std::move(state_);
    state_ = std::move(staged.next);

    if (staged.value_written) {
        const Value& v = *state_.as_container().find("value");
        const bool numeric = is_integer(v.code()) || is_float(v.code());
        for (auto [kind, band] : {std::pair{value_change_default, options_.dead_band},
                                  std::pair{value_change_archive, options_.archive_dead_band}}) {
            auto& last = last_posted_.find(kind)->second;
            bool fire = numeric ? evaluate_deadband(last ? last->to_f64() : std::nullopt, *v.to_f64(), band)
                                : (!last || !(*last == v));
            if (fire) {
                r.fired.emplace_back(kind);
                last = v;
            }
        }
    }
    if (staged.alarm_changed) r.fired.emplace_back(alarm_change);
    for (const auto* kinds : {&kinds_, &core_->node_kinds})
        for (const auto& k : *kinds)
            if (k.predicate && k.predicate(previous, state_)) r.fired.push_back(k.name);
    return r;
}

CommitResult ProcessVariable::commit(const Stager& stage) {
    auto& core = *core_;
    std::shared_lock node_shared(core.node_mutex);
    std::unique_lock<detail::TrackedSharedMutex> node_exclusive;
    if (trigger_refs_ > 0) {
        node_shared.unlock();
        node_exclusive = std::unique_lock(core.node_mutex);
    }

    std::unique_lock lock(mutex_);
    auto staged = stage(state_);
    if (!staged) return {};
    ensure_conforms(staged->next, *schema_);
    auto r = finish_locked(std::move(*staged));
    const auto node_seq = ++core.node_seq;
    std::vector<SnapshotCapture> captures;
    if (node_exclusive.owns_lock()) captures = core.capture_fired(name_, r.fired);
    // Queues are pushed in commit order; consumers run outside these locks.
    if (core.has_queues) core.publish({CommitEvent{name_, r.seq, node_seq, r.fired, schema_, state_, std::move(captures)}});
    return r;
}

void ProcessVariable::register_event_kind(std::string name, EventPredicate predicate) {
    if (!is_valid_name(name)) throw Error(ErrorCode::invalid_argument, "invalid event kind name '" + name + "'");
    if (!predicate) throw Error(ErrorCode::invalid_argument, "event kind needs a predicate");
    std::unique_lock node(core_->node_mutex);
    if (core_->kind_known(*this, name)) throw Error(ErrorCode::duplicate_name, "event kind '" + name + "' exists");
    std::unique_lock lock(mutex_);
    kinds_.push_back({std::move(name), false, std::move(predicate)});
}

bool ProcessVariable::has_event_kind(std::string_view name) const {
    std::shared_lock node(core_->node_mutex);
    return core_->kind_known(*this, name);
}

std::vector<std::string> ProcessVariable::event_kinds() const {
    std::shared_lock node(core_->node_mutex);
    std::vector<std::string> out(builtin_event_kinds.begin(), builtin_event_kinds.end());
    for (const auto& k : core_->node_kinds) out.push_back(k.name);
    for (const auto& k : kinds_) out.push_back(k.name);
    return out;
}

// ---------------------------------------------------------------------------
// NodeCore helpers

namespace detail {

bool NodeCore::kind_known(const ProcessVariable& pv, std::string_view kind) const {
    if (is_builtin_event(kind)) return true;
    auto named = [&](const EventKind& k) { return k.name == kind; };
    return std::any_of(node_kinds.begin(), node_kinds.end(), named) ||
           std::any_of(pv.kinds_.begin(), pv.kinds_.end(), named);
}

Snapshot NodeCore::capture(const SnapshotSpec& spec,
                           const std::vector<std::shared_ptr<ProcessVariable>>& member_pvs) const {
    Snapshot s;
    s.seq_tag = node_seq.load();
    std::vector<FieldDescriptor> fields;
    std::vector<Field> values;
    for (std::size_t i = 0; i < spec.members.size(); ++i) {
        const auto& m = spec.members[i];
        const auto& pv = *member_pvs[i];
        std::vector<std::string> segs{m.pv};
        segs.insert(segs.end(), m.path.segments().begin(), m.path.segments().end());
        auto name = PropertyPath(std::move(segs)).flattened();
        fields.push_back({name, descriptor_at(pv.schema_, m.path), {}});
        values.push_back({name, *pv.state_.find(m.path)});
    }
    s.members.descriptor = TypeDescriptor::container(std::move(fields));
    s.members.value = Value::container(std::move(values));
    return s;
}

std::vector<SnapshotCapture> NodeCore::capture_fired(std::string_view pv, const std::vector<std::string>& fired) const {
    std::vector<SnapshotCapture> out;
    for (const auto& [id, t] : triggers) {
        if (t.spec.trigger_pv != pv) continue;
        if (std::find(fired.begin(), fired.end(), t.spec.trigger_event) == fired.end()) continue;
        out.push_back({id, capture(t.spec, t.member_pvs)});
    }
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Database

Database::Database() : core_(std::make_shared<detail::NodeCore>()) {}

Database::~Database() {
    std::lock_guard lock(core_->queues_mutex);
    for (auto& w : core_->queues)
        if (auto q = w.lock()) q->close();
}

std::shared_ptr<ProcessVariable> Database::add(std::string name, const DescriptorPtr& schema, const Value& initial,
                                               PvOptions options) {
    auto pv = ProcessVariable::make(name, schema, initial, options, core_);
    std::lock_guard lock(core_->table_mutex);
    if (!core_->pvs.emplace(std::move(name), pv).second)
        throw Error(ErrorCode::duplicate_name, "PV '" + pv->name() + "' exists");
    return pv;
}

std::shared_ptr<ProcessVariable> Database::find(std::string_view name) const { return core_->lookup(name); }

std::shared_ptr<ProcessVariable> Database::get(std::string_view name) const {
    auto pv = core_->lookup(name);
    if (!pv) throw Error(ErrorCode::unknown_pv, "no PV named '" + std::string(name) + "'");
    return pv;
}

std::vector<std::string> Database::names() const {
    std::lock_guard lock(core_->table_mutex);
    std::vector<std::string> out;
    for (const auto& [n, _] : core_->pvs) out.push_back(n);
    return out;
}

std::size_t Database::size() const {
    std::lock_guard lock(core_->table_mutex);
    return core_->pvs.size();
}

std::uint64_t Database::node_seq() const { return core_->node_seq.load(); }

void Database::register_event_kind(std::string name, EventPredicate predicate) {
    if (!is_valid_name(name)) throw Error(ErrorCode::invalid_argument, "invalid event kind name '" + name + "'");
    if (!predicate) throw Error(ErrorCode::invalid_argument, "event kind needs a predicate");
    std::unique_lock node(core_->node_mutex);
    auto clash = is_builtin_event(name) ||
                 std::any_of(core_->node_kinds.begin(), core_->node_kinds.end(),
                             [&](const EventKind& k) { return k.name == name; });
    if (!clash) {
        std::lock_guard table(core_->table_mutex);
        for (const auto& [_, pv] : core_->pvs)
            for (const auto& k : pv->kinds_) clash = clash || k.name == name;
    }
    if (clash) throw Error(ErrorCode::duplicate_name, "event kind '" + name + "' exists");
    core_->node_kinds.push_back({std::move(name), false, std::move(predicate)});
}

std::vector<CommitResult> Database::group_composite(const std::vector<std::pair<std::string, Value>>& parts,
                                                    Timestamp ts, CopyPolicy::Coercion coercion) {
    if (parts.empty()) throw Error(ErrorCode::invalid_argument, "a group composite needs at least one part");
    std::vector<std::shared_ptr<ProcessVariable>> pvs;
    std::set<std::string, std::less<>> seen;
    for (const auto& [name, v] : parts) {
        if (!seen.insert(name).second)
            throw Error(ErrorCode::invalid_argument, "PV '" + name + "' appears twice in a group composite");
        if (!v.is<Container>() || v.as_container().fields.empty())
            throw Error(ErrorCode::invalid_argument, "composite for '" + name + "' must be a non-empty container");
        pvs.push_back(get(name));
    }

    std::unique_lock node(core_->node_mutex);
    std::vector<std::unique_lock<detail::TrackedSharedMutex>> locks;
    for (auto& pv : pvs) locks.emplace_back(pv->mutex_);

    std::vector<ProcessVariable::Staged> staged;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        staged.push_back(pvs[i]->stage_post(pvs[i]->state_, parts[i].second, ts, coercion));
        ensure_conforms(staged.back().next, *pvs[i]->schema_);
    }

    const auto node_seq = ++core_->node_seq;
    std::vector<CommitResult> results;
    std::vector<CommitEvent> events;
    std::vector<std::string> all_fired;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        results.push_back(pvs[i]->finish_locked(std::move(staged[i])));
        if (core_->has_queues)
            events.push_back({pvs[i]->name_, results.back().seq, node_seq, results.back().fired, pvs[i]->schema_,
                              pvs[i]->state_, {}});
    }
    for (std::size_t i = 0; i < parts.size(); ++i) {
        auto caps = core_->capture_fired(pvs[i]->name_, results[i].fired);
        if (!events.empty()) events[i].snapshots = std::move(caps);
    }
    if (!events.empty()) core_->publish(std::move(events));
    return results;
}

namespace {

std::vector<std::shared_ptr<ProcessVariable>> resolve_members(const Database& db, const SnapshotSpec& spec) {
    if (spec.members.empty()) throw Error(ErrorCode::invalid_argument, "a snapshot needs at least one member");
    std::vector<std::shared_ptr<ProcessVariable>> out;
    std::set<std::string> names;
    std::vector<std::string> missing;
    for (const auto& m : spec.members) {
        auto pv = db.get(m.pv);
        if (m.path.is_root()) throw Error(ErrorCode::invalid_argument, "snapshot member needs a property path");
        if (!descriptor_at(pv->schema(), m.path)) missing.push_back(m.pv + ":" + m.path.to_string());
        std::vector<std::string> segs{m.pv};
        segs.insert(segs.end(), m.path.segments().begin(), m.path.segments().end());
        if (!names.insert(PropertyPath(std::move(segs)).flattened()).second)
            throw Error(ErrorCode::invalid_argument,
                        "snapshot member '" + m.pv + ":" + m.path.to_string() + "' collides with another member");
        out.push_back(std::move(pv));
    }
    if (!missing.empty()) {
        std::string msg = "absent snapshot member";
        for (const auto& m : missing) msg += " " + m;
        throw Error(ErrorCode::absent_path, msg);
    }
    return out;
}

} // namespace

Snapshot Database::snapshot(const SnapshotSpec& spec) const {
    auto members = resolve_members(*this, spec);
    std::unique_lock node(core_->node_mutex);
    return core_->capture(spec, members);
}

std::uint64_t Database::add_snapshot_trigger(const SnapshotSpec& spec) {
    auto members = resolve_members(*this, spec);
    auto trigger = get(spec.trigger_pv);
    std::unique_lock node(core_->node_mutex);
    if (!core_->kind_known(*trigger, spec.trigger_event))
        throw Error(ErrorCode::unknown_event,
                    "PV '" + spec.trigger_pv + "' has no event kind '" + spec.trigger_event + "'");
    auto id = core_->next_trigger++;
    core_->triggers.emplace(id, detail::Trigger{spec, std::move(members), trigger});
    ++trigger->trigger_refs_;
    return id;
}

void Database::remove_snapshot_trigger(std::uint64_t id) {
    std::unique_lock node(core_->node_mutex);
    auto it = core_->triggers.find(id);
    if (it == core_->triggers.end()) return;
    --it->second.trigger_pv->trigger_refs_;
    core_->triggers.erase(it);
}

std::shared_ptr<CommitQueue> Database::subscribe_commits() {
    auto q = std::make_shared<CommitQueue>();
    std::lock_guard lock(core_->queues_mutex);
    core_->queues.push_back(q);
    core_->has_queues = true;
    return q;
}

} // namespace pw
