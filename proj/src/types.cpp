// SPDX-License-Identifier: Apache-2.0
#include "pw/types.hpp"

#include <algorithm>
#include <mutex>

#include "pw/detail/lock_audit.hpp"
#include <set>
#include <unordered_map>

namespace pw {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::ok: return "ok";
    case ErrorCode::path_syntax: return "path-syntax";
    case ErrorCode::absent_path: return "absent-path";
    case ErrorCode::handle_mismatch: return "handle-mismatch";
    case ErrorCode::type_mismatch: return "type-mismatch";
    case ErrorCode::access: return "access";
    case ErrorCode::invalid_descriptor: return "invalid-descriptor";
    case ErrorCode::parse: return "parse";
    case ErrorCode::kind: return "kind";
    case ErrorCode::range: return "range";
    case ErrorCode::strict_copy: return "strict-copy";
    case ErrorCode::duplicate_name: return "duplicate-name";
    case ErrorCode::unknown_pv: return "unknown-pv";
    case ErrorCode::unknown_event: return "unknown-event";
    case ErrorCode::protocol: return "protocol";
    case ErrorCode::decode: return "decode";
    case ErrorCode::disconnected: return "disconnected";
    case ErrorCode::timeout: return "timeout";
    case ErrorCode::overflow: return "overflow";
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::transport: return "transport";
    case ErrorCode::config: return "config";
    }
    return "unknown";
}

namespace {

constexpr std::string_view code_names[type_code_count] = {
    "bool", "i8", "i16", "i32", "i64", "u8", "u16", "u32",
    "u64", "f32", "f64", "string", "enumerated", "container", "array",
};

} // namespace

std::string_view code_name(TypeCode code) noexcept {
    auto i = static_cast<std::size_t>(code);
    return i < type_code_count ? code_names[i] : "invalid";
}

std::optional<TypeCode> parse_code(std::string_view name) noexcept {
    for (std::size_t i = 0; i < type_code_count; ++i)
        if (code_names[i] == name) return static_cast<TypeCode>(i);
    return std::nullopt;
}

bool is_integer(TypeCode c) noexcept { return c >= TypeCode::i8 && c <= TypeCode::u64; }
bool is_signed_integer(TypeCode c) noexcept { return c >= TypeCode::i8 && c <= TypeCode::i64; }
bool is_float(TypeCode c) noexcept { return c == TypeCode::f32 || c == TypeCode::f64; }
bool is_numeric(TypeCode c) noexcept { return is_integer(c) || is_float(c); }
bool is_scalar_kind(TypeCode c) noexcept { return c <= TypeCode::enumerated; }
bool is_valid_code(std::uint8_t raw) noexcept { return raw < type_code_count; }

bool is_valid_name(std::string_view name) noexcept {
    if (name.empty()) return false;
    auto alpha = [](char c) { return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || c == '_'; };
    if (!alpha(name.front())) return false;
    return std::all_of(name.begin() + 1, name.end(), [&](char c) { return alpha(c) || (c >= '0' && c <= '9'); });
}

// ---------------------------------------------------------------------------
// TypeDescriptor

TypeDescriptor::TypeDescriptor(TypeCode code, std::vector<std::string> labels, std::vector<FieldDescriptor> fields,
                               DescriptorPtr element, std::uint8_t rank)
    : code_(code), labels_(std::move(labels)), fields_(std::move(fields)), element_(std::move(element)), rank_(rank) {}

DescriptorPtr TypeDescriptor::scalar(TypeCode code) {
    if (!is_scalar_kind(code) || code == TypeCode::enumerated)
        throw Error(ErrorCode::kind, "scalar() needs a primitive or string code, got " + std::string(code_name(code)));
    // Scalars are immutable and identical, so hand out one instance per code.
    static const auto table = [] {
        std::vector<DescriptorPtr> t;
        for (std::size_t i = 0; i <= static_cast<std::size_t>(TypeCode::string); ++i)
            t.push_back(std::make_shared<const TypeDescriptor>(static_cast<TypeCode>(i), std::vector<std::string>{},
                                                               std::vector<FieldDescriptor>{}, nullptr, 0));
        return t;
    }();
    return table[static_cast<std::size_t>(code)];
}

DescriptorPtr TypeDescriptor::enumerated(std::vector<std::string> labels) {
    return std::make_shared<const TypeDescriptor>(TypeCode::enumerated, std::move(labels),
                                                  std::vector<FieldDescriptor>{}, nullptr, 0);
}

DescriptorPtr TypeDescriptor::container(std::vector<FieldDescriptor> fields) {
    return std::make_shared<const TypeDescriptor>(TypeCode::container, std::vector<std::string>{}, std::move(fields),
                                                  nullptr, 0);
}

DescriptorPtr TypeDescriptor::array(DescriptorPtr element, std::uint8_t declared_rank) {
    return std::make_shared<const TypeDescriptor>(TypeCode::array, std::vector<std::string>{},
                                                  std::vector<FieldDescriptor>{}, std::move(element), declared_rank);
}

const FieldDescriptor* TypeDescriptor::field(std::string_view name) const noexcept {
    for (const auto& f : fields_)
        if (f.name == name) return &f;
    return nullptr;
}

std::optional<std::size_t> TypeDescriptor::field_index(std::string_view name) const noexcept {
    for (std::size_t i = 0; i < fields_.size(); ++i)
        if (fields_[i].name == name) return i;
    return std::nullopt;
}

bool same_shape(const DescriptorPtr& a, const DescriptorPtr& b) noexcept {
    if (a == b) return true;
    if (!a || !b) return false;
    return *a == *b;
}

bool operator==(const TypeDescriptor& a, const TypeDescriptor& b) noexcept {
    if (&a == &b) return true;
    if (a.code_ != b.code_) return false;
    switch (a.code_) {
    case TypeCode::enumerated: return a.labels_ == b.labels_;
    case TypeCode::container:
        if (a.fields_.size() != b.fields_.size()) return false;
        for (std::size_t i = 0; i < a.fields_.size(); ++i) {
            if (a.fields_[i].name != b.fields_[i].name) return false;
            if (!same_shape(a.fields_[i].type, b.fields_[i].type)) return false;
        }
        return true;
    case TypeCode::array: return a.rank_ == b.rank_ && same_shape(a.element_, b.element_);
    default: return true;
    }
}

std::size_t descriptor_depth(const TypeDescriptor& d) noexcept {
    switch (d.code()) {
    case TypeCode::container: {
        std::size_t deepest = 0;
        for (const auto& f : d.fields())
            if (f.type) deepest = std::max(deepest, descriptor_depth(*f.type));
        return deepest + 1;
    }
    case TypeCode::array: return 1 + (d.element() ? descriptor_depth(*d.element()) : 0);
    default: return 0;
    }
}

std::string signature(const TypeDescriptor& d) {
    std::string out(code_name(d.code()));
    switch (d.code()) {
    case TypeCode::enumerated:
        out += '(';
        for (std::size_t i = 0; i < d.labels().size(); ++i) {
            if (i) out += '|';
            out += std::to_string(d.labels()[i].size()) + ':' + d.labels()[i];
        }
        out += ')';
        break;
    case TypeCode::container:
        out += '{';
        for (const auto& f : d.fields()) {
            out += f.name + ':';
            out += f.type ? signature(*f.type) : std::string("?");
            out += ';';
        }
        out += '}';
        break;
    case TypeCode::array:
        out += '<';
        out += d.element() ? signature(*d.element()) : std::string("?");
        out += '/' + std::to_string(d.declared_rank()) + '>';
        break;
    default: break;
    }
    return out;
}

std::string_view to_string(Violation::Kind kind) noexcept {
    switch (kind) {
    case Violation::Kind::duplicate_name: return "duplicate-name";
    case Violation::Kind::invalid_name: return "invalid-name";
    case Violation::Kind::too_deep: return "too-deep";
    case Violation::Kind::array_of_array: return "array-of-array";
    case Violation::Kind::empty_enum: return "empty-enum";
    case Violation::Kind::empty_label: return "empty-label";
    case Violation::Kind::duplicate_label: return "duplicate-label";
    case Violation::Kind::too_many_fields: return "too-many-fields";
    case Violation::Kind::rank_too_large: return "rank-too-large";
    case Violation::Kind::missing_element: return "missing-element";
    case Violation::Kind::missing_field_type: return "missing-field-type";
    }
    return "unknown";
}

namespace {

void validate_into(const TypeDescriptor& d, const std::string& path, std::size_t level,
                   std::vector<Violation>& out) {
    using K = Violation::Kind;
    auto here = path.empty() ? std::string("<root>") : path;
    switch (d.code()) {
    case TypeCode::enumerated: {
        if (d.labels().empty()) out.push_back({K::empty_enum, here, "enumeration has no labels"});
        std::set<std::string> seen;
        for (const auto& l : d.labels()) {
            if (l.empty()) out.push_back({K::empty_label, here, "empty label"});
            else if (!seen.insert(l).second) out.push_back({K::duplicate_label, here, "label '" + l + "' repeated"});
        }
        break;
    }
    case TypeCode::container: {
        if (level + 1 > max_depth)
            out.push_back({K::too_deep, here, "nesting exceeds " + std::to_string(max_depth)});
        if (d.fields().size() > max_fields)
            out.push_back({K::too_many_fields, here, std::to_string(d.fields().size()) + " fields"});
        std::set<std::string> seen;
        for (const auto& f : d.fields()) {
            auto sub = path.empty() ? f.name : path + '.' + f.name;
            if (!is_valid_name(f.name)) out.push_back({K::invalid_name, sub, "'" + f.name + "' is not a property name"});
            if (!seen.insert(f.name).second)
                out.push_back({K::duplicate_name, sub, "field '" + f.name + "' repeated"});
            if (!f.type) {
                out.push_back({K::missing_field_type, sub, "field has no descriptor"});
                continue;
            }
            // Only report depth once per branch.
            if (level + 1 <= max_depth) validate_into(*f.type, sub, level + 1, out);
        }
        break;
    }
    case TypeCode::array:
        if (level + 1 > max_depth)
            out.push_back({K::too_deep, here, "nesting exceeds " + std::to_string(max_depth)});
        if (d.declared_rank() > max_rank)
            out.push_back({K::rank_too_large, here, "rank " + std::to_string(d.declared_rank())});
        if (!d.element()) {
            out.push_back({K::missing_element, here, "array has no element descriptor"});
        } else if (d.element()->code() == TypeCode::array) {
            out.push_back({K::array_of_array, here, "array element may not be an array"});
        } else if (level + 1 <= max_depth) {
            validate_into(*d.element(), path, level + 1, out);
        }
        break;
    default: break;
    }
}

} // namespace

std::vector<Violation> validate_descriptor(const TypeDescriptor& d) {
    std::vector<Violation> out;
    validate_into(d, "", 0, out);
    return out;
}

void ensure_valid(const TypeDescriptor& d) {
    auto v = validate_descriptor(d);
    if (v.empty()) return;
    std::string msg = "invalid descriptor:";
    for (const auto& x : v) msg += " [" + std::string(to_string(x.kind)) + " " + x.path + ": " + x.detail + "]";
    throw Error(ErrorCode::invalid_descriptor, msg);
}

// ---------------------------------------------------------------------------
// PropertyPath

PropertyPath::PropertyPath(std::vector<std::string> segments) : segments_(std::move(segments)) {
    for (const auto& s : segments_)
        if (!is_valid_name(s)) throw Error(ErrorCode::path_syntax, "invalid property name '" + s + "'");
}

std::optional<PropertyPath> PropertyPath::try_parse(std::string_view text) noexcept {
    if (text.empty()) return std::nullopt;
    PropertyPath p;
    std::size_t start = 0;
    while (true) {
        auto dot = text.find('.', start);
        auto part = text.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start);
        if (!is_valid_name(part)) return std::nullopt;
        p.segments_.emplace_back(part);
        if (dot == std::string_view::npos) break;
        start = dot + 1;
    }
    return p;
}

PropertyPath PropertyPath::parse(std::string_view text) {
    if (auto p = try_parse(text)) return *p;
    throw Error(ErrorCode::path_syntax, "malformed property path '" + std::string(text) + "'");
}

PropertyPath PropertyPath::child(std::string name) const {
    if (!is_valid_name(name)) throw Error(ErrorCode::path_syntax, "invalid property name '" + name + "'");
    PropertyPath p = *this;
    p.segments_.push_back(std::move(name));
    return p;
}

PropertyPath PropertyPath::parent() const {
    PropertyPath p = *this;
    if (!p.segments_.empty()) p.segments_.pop_back();
    return p;
}

std::string PropertyPath::to_string() const {
    std::string out;
    for (std::size_t i = 0; i < segments_.size(); ++i) {
        if (i) out += '.';
        out += segments_[i];
    }
    return out;
}

std::string PropertyPath::flattened() const {
    std::string out;
    for (std::size_t i = 0; i < segments_.size(); ++i) {
        if (i) out += '_';
        out += segments_[i];
    }
    return out;
}

DescriptorPtr descriptor_at(const DescriptorPtr& d, const PropertyPath& path) noexcept {
    DescriptorPtr cur = d;
    for (const auto& seg : path.segments()) {
        if (!cur || cur->code() != TypeCode::container) return nullptr;
        auto* f = cur->field(seg);
        if (!f) return nullptr;
        cur = f->type;
    }
    return cur;
}

// ---------------------------------------------------------------------------
// Value

const Value* Container::find(std::string_view name) const noexcept {
    for (const auto& f : fields)
        if (f.name == name) return &f.value;
    return nullptr;
}

Value* Container::find(std::string_view name) noexcept {
    for (auto& f : fields)
        if (f.name == name) return &f.value;
    return nullptr;
}

void Container::set(std::string name, Value value) {
    if (auto* v = find(name)) {
        *v = std::move(value);
        return;
    }
    fields.push_back({std::move(name), std::move(value)});
}

bool operator==(const Container& a, const Container& b) { return a.fields == b.fields; }
bool operator==(const Array& a, const Array& b) { return a.extents == b.extents && a.elements == b.elements; }

Value Value::container(std::vector<Field> fields) { return Value(Container{std::move(fields)}); }

Value Value::array(std::vector<std::uint32_t> extents, std::vector<Value> elements) {
    return Value(Array{std::move(extents), std::move(elements)});
}

const Value* Value::find(const PropertyPath& path) const noexcept {
    const Value* cur = this;
    for (const auto& seg : path.segments()) {
        auto* c = std::get_if<Container>(&cur->data_);
        if (!c) return nullptr;
        cur = c->find(seg);
        if (!cur) return nullptr;
    }
    return cur;
}

Value* Value::find(const PropertyPath& path) noexcept {
    return const_cast<Value*>(std::as_const(*this).find(path));
}

std::optional<double> Value::to_f64() const noexcept {
    return std::visit(
        [](const auto& x) -> std::optional<double> {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_arithmetic_v<T>) return static_cast<double>(x);
            else return std::nullopt;
        },
        data_);
}

namespace {

bool conforms_at(const Value& v, const TypeDescriptor& d, const std::string& path, std::string* why) {
    auto fail = [&](const std::string& msg) {
        if (why) *why = (path.empty() ? std::string("<root>") : path) + ": " + msg;
        return false;
    };
    if (v.code() != d.code())
        return fail("expected " + std::string(code_name(d.code())) + ", got " + std::string(code_name(v.code())));
    switch (d.code()) {
    case TypeCode::enumerated:
        if (v.get<EnumIndex>().index >= d.labels().size())
            return fail("enumerated index " + std::to_string(v.get<EnumIndex>().index) + " out of range");
        return true;
    case TypeCode::container: {
        const auto& c = v.as_container();
        if (c.fields.size() != d.fields().size()) return fail("field count differs");
        for (std::size_t i = 0; i < c.fields.size(); ++i) {
            const auto& fd = d.fields()[i];
            auto sub = path.empty() ? fd.name : path + '.' + fd.name;
            if (c.fields[i].name != fd.name) return fail("expected field '" + fd.name + "'");
            if (!fd.type || !conforms_at(c.fields[i].value, *fd.type, sub, why)) return false;
        }
        return true;
    }
    case TypeCode::array: {
        const auto& a = v.as_array();
        if (a.extents.empty() || a.extents.size() > max_rank) return fail("array rank out of range");
        if (d.declared_rank() != 0 && a.extents.size() != d.declared_rank())
            return fail("rank " + std::to_string(a.extents.size()) + " where " + std::to_string(d.declared_rank()) +
                        " is declared");
        std::uint64_t count = 1;
        for (auto e : a.extents) count *= e;
        if (count != a.elements.size()) return fail("element count does not match extents");
        if (!d.element()) return fail("descriptor lacks element");
        for (const auto& e : a.elements)
            if (!conforms_at(e, *d.element(), path + "[]", why)) return false;
        return true;
    }
    default: return true;
    }
}

} // namespace

bool conforms(const Value& v, const TypeDescriptor& d, std::string* why) { return conforms_at(v, d, "", why); }

void ensure_conforms(const Value& v, const TypeDescriptor& d) {
    std::string why;
    if (!conforms(v, d, &why)) throw Error(ErrorCode::type_mismatch, "value does not conform: " + why);
}

Value default_value(const TypeDescriptor& d) {
    switch (d.code()) {
    case TypeCode::boolean: return Value(false);
    case TypeCode::i8: return Value(std::int8_t{0});
    case TypeCode::i16: return Value(std::int16_t{0});
    case TypeCode::i32: return Value(std::int32_t{0});
    case TypeCode::i64: return Value(std::int64_t{0});
    case TypeCode::u8: return Value(std::uint8_t{0});
    case TypeCode::u16: return Value(std::uint16_t{0});
    case TypeCode::u32: return Value(std::uint32_t{0});
    case TypeCode::u64: return Value(std::uint64_t{0});
    case TypeCode::f32: return Value(0.0f);
    case TypeCode::f64: return Value(0.0);
    case TypeCode::string: return Value(std::string{});
    case TypeCode::enumerated: return Value::enumerated(0);
    case TypeCode::container: {
        Container c;
        for (const auto& f : d.fields()) c.fields.push_back({f.name, default_value(*f.type)});
        return Value(std::move(c));
    }
    case TypeCode::array: {
        std::size_t rank = d.declared_rank() == 0 ? 1 : d.declared_rank();
        return Value::array(std::vector<std::uint32_t>(rank, 0), {});
    }
    }
    return Value();
}

// ---------------------------------------------------------------------------
// DescriptorPool

struct DescriptorPool::Impl {
    mutable detail::TrackedMutex mutex;
    std::unordered_map<std::string, std::pair<DescriptorPtr, std::uint32_t>> by_signature;
};

DescriptorPool::DescriptorPool() : impl_(std::make_shared<Impl>()) {}

DescriptorPool& DescriptorPool::global() {
    static DescriptorPool pool;
    return pool;
}

DescriptorPtr DescriptorPool::intern(const DescriptorPtr& d) {
    if (!d) return d;
    auto key = signature(*d);
    std::lock_guard lock(impl_->mutex);
    auto [it, inserted] =
        impl_->by_signature.try_emplace(std::move(key), d, static_cast<std::uint32_t>(impl_->by_signature.size() + 1));
    return it->second.first;
}

std::uint32_t DescriptorPool::id_of(const DescriptorPtr& d) {
    if (!d) return 0;
    auto key = signature(*d);
    std::lock_guard lock(impl_->mutex);
    auto [it, inserted] =
        impl_->by_signature.try_emplace(std::move(key), d, static_cast<std::uint32_t>(impl_->by_signature.size() + 1));
    return it->second.second;
}

std::size_t DescriptorPool::size() const {
    std::lock_guard lock(impl_->mutex);
    return impl_->by_signature.size();
}

} // namespace pw
