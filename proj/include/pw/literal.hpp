// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>

#include "pw/types.hpp"

namespace pw {

/// Parses the human literal syntax: integers, decimals, `true`/`false`,
/// double-quoted strings (escapes `\"`, `\\`, `\n`, `\t`), bare words as
/// text, and `[a,b,...]` arrays with an optional `@2x2` extent suffix.
/// Integers yield i64, decimals f64, arrays of those.
/// Throws Error(parse).
Value parse_literal(std::string_view text);

/// Converts a parsed literal to d. Lossy conversions are refused with
/// Error(range); shape mismatches and unconvertible text with
/// Error(type_mismatch).
Value coerce_literal(const Value& literal, const TypeDescriptor& d);

/// parse_literal followed by coerce_literal.
Value literal_for(std::string_view text, const TypeDescriptor& d);

/// Renders v in literal syntax. Enumerated values print their label when d
/// is given.
std::string format_literal(const Value& v, const TypeDescriptor* d = nullptr);

/// Partial container holding `literal` at `path` inside schema `d`.
Value partial_update(const TypeDescriptor& d, const PropertyPath& path, std::string_view literal);

/// Merges the fields of `update` (a partial container) into `into`.
void merge_partial(Value& into, const Value& update);

} // namespace pw
