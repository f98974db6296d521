// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <vector>

#include "pw/data_source.hpp"
#include "pw/types.hpp"

namespace pw {

enum class ConversionDetail { exact, rounded, clamped, parsed, formatted };

std::string_view to_string(ConversionDetail detail) noexcept;

struct ConversionResult {
    Value value;
    bool lossy = false;
    ConversionDetail detail = ConversionDetail::exact;
};

/// Converts a scalar (primitive, string or enumerated) to another scalar
/// kind.
///
///  - integer to integer: exact when in range, otherwise saturates (clamped)
///  - float to integer: round half to even, then saturate; NaN is a range error
///  - integer to float: exact when representable, else nearest (rounded)
///  - f64 to f32: nearest (rounded); finite values beyond f32 range saturate
///  - anything to string: shortest round-trip decimal (formatted)
///  - string to numeric: optional sign, digits, fraction, exponent (parsed);
///    saturation reports clamped; anything else is a parse error
///  - bool and numbers: false/0 and true/1; other non-zero values map to
///    true (clamped)
///  - enumerated: to string yields the label, from string matches a label
///    exactly; numbers map to the index when it is in range
///
/// Containers and arrays raise Error(kind).
ConversionResult convert(const Value& v, const TypeDescriptor& from, const TypeDescriptor& to);

/// Shorthand for targets that need no labels. The source descriptor is the
/// value's own code; enumerated sources are converted by index.
ConversionResult convert(const Value& v, TypeCode target);

/// Whether every value of `from` is exactly representable in `to`.
bool widens_exactly(TypeCode from, TypeCode to) noexcept;

struct ComparisonReport {
    bool shape_equal = false;
    /// Only meaningful when shape_equal.
    bool value_equal = false;
    /// Absent exactly when the relevant equality holds.
    std::optional<PropertyPath> first_difference;
};

ComparisonReport compare(const DataSource& a, const DataSource& b);

struct CopyPolicy {
    enum class Mode { strict, lenient };
    enum class Coercion { allow, forbid };
    Mode mode = Mode::lenient;
    Coercion coercion = Coercion::forbid;

    static CopyPolicy strict(Coercion c = Coercion::forbid) { return {Mode::strict, c}; }
    static CopyPolicy lenient(Coercion c = Coercion::forbid) { return {Mode::lenient, c}; }
};

/// The four lists are disjoint and together cover every destination leaf.
/// Paths copied through a lossy conversion appear only in `lossy`.
struct CopyReport {
    std::vector<PropertyPath> copied;
    std::vector<PropertyPath> skipped_absent;
    std::vector<PropertyPath> skipped_incompatible;
    std::vector<PropertyPath> lossy;
};

/// Copies name-matched leaf properties (non-containers) from src into dst,
/// visiting dst in traverse order. In strict mode any skip throws
/// Error(strict_copy) and dst is left untouched; GenericSource destinations
/// are additionally staged so that a failing write cannot leave them
/// partially modified.
CopyReport copy_into(const DataSource& src, DataSource& dst, CopyPolicy policy = {});

struct Projection {
    DescriptorPtr descriptor;
    Value value;
};

/// Extracts the named properties into a new container whose field names are
/// the paths with `.` replaced by `_`. Throws absent_path naming every
/// missing path, invalid_argument for empty, duplicate or colliding names.
Projection project(const DataSource& src, std::span<const PropertyPath> paths);

/// The descriptor project() would produce, without reading any data.
DescriptorPtr projection_descriptor(const DescriptorPtr& schema, std::span<const PropertyPath> paths);

} // namespace pw
