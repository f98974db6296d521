// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "pw/error.hpp"

namespace pw {

/// Stable single-byte kind codes. The numbering is part of the wire format.
enum class TypeCode : std::uint8_t {
    boolean = 0x00,
    i8 = 0x01,
    i16 = 0x02,
    i32 = 0x03,
    i64 = 0x04,
    u8 = 0x05,
    u16 = 0x06,
    u32 = 0x07,
    u64 = 0x08,
    f32 = 0x09,
    f64 = 0x0A,
    string = 0x0B,
    enumerated = 0x0C,
    container = 0x0D,
    array = 0x0E,
};

inline constexpr std::size_t type_code_count = 15;
inline constexpr std::size_t max_depth = 16;
inline constexpr std::size_t max_fields = 255;
inline constexpr std::size_t max_rank = 7;

std::string_view code_name(TypeCode code) noexcept;
std::optional<TypeCode> parse_code(std::string_view name) noexcept;
bool is_integer(TypeCode code) noexcept;
bool is_signed_integer(TypeCode code) noexcept;
bool is_float(TypeCode code) noexcept;
bool is_numeric(TypeCode code) noexcept;
/// Primitive, string or enumerated: anything convert() accepts.
bool is_scalar_kind(TypeCode code) noexcept;
bool is_valid_code(std::uint8_t raw) noexcept;

/// Property names follow `[A-Za-z_][A-Za-z0-9_]*`.
bool is_valid_name(std::string_view name) noexcept;

class TypeDescriptor;
using DescriptorPtr = std::shared_ptr<const TypeDescriptor>;

struct FieldDescriptor {
    std::string name;
    DescriptorPtr type;
    /// Free-text note on what the property means. Not part of the shape.
    std::string annotation;
};

/// Immutable, recursive shape description. Instances are shared through
/// DescriptorPtr, so a single description can back any number of data
/// instances. Factories do not validate; use validate_descriptor().
class TypeDescriptor {
public:
    static DescriptorPtr scalar(TypeCode code);
    static DescriptorPtr enumerated(std::vector<std::string> labels);
    static DescriptorPtr container(std::vector<FieldDescriptor> fields);
    static DescriptorPtr array(DescriptorPtr element, std::uint8_t declared_rank = 0);

    TypeCode code() const noexcept { return code_; }
    const std::vector<std::string>& labels() const noexcept { return labels_; }
    const std::vector<FieldDescriptor>& fields() const noexcept { return fields_; }
    const DescriptorPtr& element() const noexcept { return element_; }
    std::uint8_t declared_rank() const noexcept { return rank_; }

    const FieldDescriptor* field(std::string_view name) const noexcept;
    std::optional<std::size_t> field_index(std::string_view name) const noexcept;

    /// Structural equality: codes, names, order, labels and ranks.
    /// Annotations do not take part.
    friend bool operator==(const TypeDescriptor& a, const TypeDescriptor& b) noexcept;

    TypeDescriptor(TypeCode code, std::vector<std::string> labels, std::vector<FieldDescriptor> fields,
                   DescriptorPtr element, std::uint8_t rank);

private:
    TypeCode code_;
    std::vector<std::string> labels_;
    std::vector<FieldDescriptor> fields_;
    DescriptorPtr element_;
    std::uint8_t rank_ = 0;
};

bool same_shape(const DescriptorPtr& a, const DescriptorPtr& b) noexcept;

/// Number of container/array levels on the deepest branch. Scalars are 0.
std::size_t descriptor_depth(const TypeDescriptor& d) noexcept;

/// Canonical text form, also used as the interning key.
std::string signature(const TypeDescriptor& d);

struct Violation {
    enum class Kind {
        duplicate_name,
        invalid_name,
        too_deep,
        array_of_array,
        empty_enum,
        empty_label,
        duplicate_label,
        too_many_fields,
        rank_too_large,
        missing_element,
        missing_field_type,
    };
    Kind kind;
    std::string path;
    std::string detail;
};

std::string_view to_string(Violation::Kind kind) noexcept;

/// Every invariant violation in d; empty means valid.
std::vector<Violation> validate_descriptor(const TypeDescriptor& d);

/// Throws Error(invalid_descriptor) listing the violations when d is invalid.
void ensure_valid(const TypeDescriptor& d);

/// A dotted sequence of property names. The empty path designates the root
/// of a source and is only produced programmatically, never parsed.
class PropertyPath {
public:
    PropertyPath() = default;
    explicit PropertyPath(std::vector<std::string> segments);

    /// Throws Error(path_syntax) on malformed text.
    static PropertyPath parse(std::string_view text);
    static std::optional<PropertyPath> try_parse(std::string_view text) noexcept;
    static PropertyPath root() { return {}; }

    const std::vector<std::string>& segments() const noexcept { return segments_; }
    bool is_root() const noexcept { return segments_.empty(); }
    std::size_t size() const noexcept { return segments_.size(); }

    PropertyPath child(std::string name) const;
    PropertyPath parent() const;
    std::string to_string() const;
    /// Segments joined with `_`, used for projected field names.
    std::string flattened() const;

    friend auto operator<=>(const PropertyPath&, const PropertyPath&) = default;
    friend bool operator==(const PropertyPath&, const PropertyPath&) = default;

private:
    std::vector<std::string> segments_;
};

/// Descriptor at path inside d, or null when absent.
DescriptorPtr descriptor_at(const DescriptorPtr& d, const PropertyPath& path) noexcept;

struct EnumIndex {
    std::uint16_t index = 0;
    friend auto operator<=>(const EnumIndex&, const EnumIndex&) = default;
};

class Value;
struct Field;

struct Container {
    std::vector<Field> fields;

    const Value* find(std::string_view name) const noexcept;
    Value* find(std::string_view name) noexcept;
    /// Replaces an existing field or appends a new one.
    void set(std::string name, Value value);
    friend bool operator==(const Container&, const Container&);
};

struct Array {
    std::vector<std::uint32_t> extents;
    std::vector<Value> elements;

    std::size_t rank() const noexcept { return extents.size(); }
    friend bool operator==(const Array&, const Array&);
};

template <class T, class... Ts>
concept one_of = (std::is_same_v<std::remove_cvref_t<T>, Ts> || ...);

template <class T>
concept value_alternative =
    one_of<T, bool, std::int8_t, std::int16_t, std::int32_t, std::int64_t, std::uint8_t, std::uint16_t, std::uint32_t,
           std::uint64_t, float, double, std::string, EnumIndex, Container, Array>;

/// A tagged datum. The variant index equals the numeric TypeCode.
class Value {
public:
    using Storage = std::variant<bool, std::int8_t, std::int16_t, std::int32_t, std::int64_t, std::uint8_t,
                                 std::uint16_t, std::uint32_t, std::uint64_t, float, double, std::string,
                                 EnumIndex, Container, Array>;

    Value() : data_(Container{}) {}

    template <class T>
        requires value_alternative<T>
    Value(T&& v) : data_(std::forward<T>(v)) {}

    Value(const char* text) : data_(std::string(text)) {}
    Value(std::string_view text) : data_(std::string(text)) {}

    static Value container(std::vector<Field> fields);
    static Value array(std::vector<std::uint32_t> extents, std::vector<Value> elements);
    static Value enumerated(std::uint16_t index) { return Value(EnumIndex{index}); }

    TypeCode code() const noexcept { return static_cast<TypeCode>(data_.index()); }
    const Storage& storage() const noexcept { return data_; }
    Storage& storage() noexcept { return data_; }

    template <class T>
    bool is() const noexcept {
        return std::holds_alternative<T>(data_);
    }
    template <class T>
    const T& get() const {
        if (auto* p = std::get_if<T>(&data_)) return *p;
        throw Error(ErrorCode::kind, "value holds " + std::string(code_name(code())));
    }
    template <class T>
    T& get() {
        if (auto* p = std::get_if<T>(&data_)) return *p;
        throw Error(ErrorCode::kind, "value holds " + std::string(code_name(code())));
    }

    const Container& as_container() const { return get<Container>(); }
    Container& as_container() { return get<Container>(); }
    const Array& as_array() const { return get<Array>(); }
    Array& as_array() { return get<Array>(); }

    /// Sub-value at path, or null. The root path yields this value.
    const Value* find(const PropertyPath& path) const noexcept;
    Value* find(const PropertyPath& path) noexcept;

    /// Numeric and boolean scalars as double; nullopt otherwise.
    std::optional<double> to_f64() const noexcept;

    friend bool operator==(const Value& a, const Value& b) { return a.data_ == b.data_; }

private:
    Storage data_;
};

struct Field {
    std::string name;
    Value value;
    friend bool operator==(const Field&, const Field&) = default;
};

/// Whether v has the shape and bounds d requires. On failure `why`, when
/// provided, receives a short explanation naming the offending path.
bool conforms(const Value& v, const TypeDescriptor& d, std::string* why = nullptr);

/// Throws Error(type_mismatch) when v does not conform to d.
void ensure_conforms(const Value& v, const TypeDescriptor& d);

/// Zero numerics, empty text, index 0, and empty arrays of the declared rank
/// (rank 1 when the rank is left to data time).
Value default_value(const TypeDescriptor& d);

/// Process-wide interning of descriptors. Structurally equal descriptors
/// map to one shared instance and one numeric id.
class DescriptorPool {
public:
    static DescriptorPool& global();

    DescriptorPtr intern(const DescriptorPtr& d);
    std::uint32_t id_of(const DescriptorPtr& d);
    std::size_t size() const;

private:
    struct Impl;
    DescriptorPool();
    std::shared_ptr<Impl> impl_;
};

} // namespace pw
