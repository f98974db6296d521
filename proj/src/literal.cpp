// SPDX-License-Identifier: Apache-2.0
#include "pw/literal.hpp"

#include <charconv>
#include <cmath>

#include "pw/transform.hpp"

namespace pw {

namespace {

[[noreturn]] void bad(std::string_view text, const std::string& why) {
    throw Error(ErrorCode::parse, "bad literal '" + std::string(text) + "': " + why);
}

Value parse_scalar(std::string_view t, std::string_view whole) {
    if (t.empty()) bad(whole, "empty element");
    if (t == "true") return Value(true);
    if (t == "false") return Value(false);
    if (t.front() == '"') {
        if (t.size() < 2 || t.back() != '"') bad(whole, "unterminated string");
        std::string out;
        for (std::size_t i = 1; i + 1 < t.size(); ++i) {
            char c = t[i];
            if (c == '\\') {
                if (i + 2 >= t.size()) bad(whole, "dangling escape");
                char e = t[++i];
                switch (e) {
                case 'n': out += '\n'; break;
                case 't': out += '\t'; break;
                case '"':
                case '\\': out += e; break;
                default: bad(whole, std::string("unknown escape \\") + e);
                }
            } else if (c == '"') {
                bad(whole, "unescaped quote");
            } else {
                out += c;
            }
        }
        return Value(std::move(out));
    }
    auto body = t;
    if (body.front() == '+') body.remove_prefix(1);
    std::int64_t i = 0;
    auto [ip, iec] = std::from_chars(body.data(), body.data() + body.size(), i);
    if (iec == std::errc{} && ip == body.data() + body.size()) return Value(i);
    double d = 0;
    auto [dp, dec] = std::from_chars(body.data(), body.data() + body.size(), d);
    if ((dec == std::errc{} || dec == std::errc::result_out_of_range) && dp == body.data() + body.size()) {
        if (dec == std::errc::result_out_of_range) bad(whole, "number out of range");
        return Value(d);
    }
    if (is_valid_name(t)) return Value(std::string(t));
    bad(whole, "not a number, boolean, string or name");
}

std::vector<std::string_view> split_elements(std::string_view inner, std::string_view whole) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    bool quoted = false;
    for (std::size_t i = 0; i < inner.size(); ++i) {
        char c = inner[i];
        if (quoted) {
            if (c == '\\') ++i;
            else if (c == '"') quoted = false;
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(inner.substr(start, i - start));
            start = i + 1;
        } else if (c == '[' || c == ']') {
            bad(whole, "nested arrays are not allowed");
        }
    }
    if (quoted) bad(whole, "unterminated string");
    out.push_back(inner.substr(start));
    for (auto& e : out) {
        while (!e.empty() && e.front() == ' ') e.remove_prefix(1);
        while (!e.empty() && e.back() == ' ') e.remove_suffix(1);
    }
    if (out.size() == 1 && out[0].empty()) out.clear();
    return out;
}

} // namespace

Value parse_literal(std::string_view text) {
    while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
    while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
    if (text.empty()) bad(text, "empty");
    if (text.front() != '[') return parse_scalar(text, text);

    auto close = text.rfind(']');
    if (close == std::string_view::npos) bad(text, "unterminated array");
    auto elements = split_elements(text.substr(1, close - 1), text);
    std::vector<Value> values;
    for (auto e : elements) values.push_back(parse_scalar(e, text));

    std::vector<std::uint32_t> extents{static_cast<std::uint32_t>(values.size())};
    auto suffix = text.substr(close + 1);
    if (!suffix.empty()) {
        if (suffix.front() != '@') bad(text, "unexpected text after array");
        suffix.remove_prefix(1);
        extents.clear();
        std::uint64_t product = 1;
        while (true) {
            auto x = suffix.find('x');
            auto part = suffix.substr(0, x);
            std::uint32_t n = 0;
            auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), n);
            if (ec != std::errc{} || p != part.data() + part.size() || part.empty()) bad(text, "bad extent suffix");
            extents.push_back(n);
            product *= n;
            if (extents.size() > max_rank) bad(text, "more than 7 extents");
            if (x == std::string_view::npos) break;
            suffix.remove_prefix(x + 1);
        }
        if (product != values.size())
            bad(text, "extents cover " + std::to_string(product) + " elements, found " + std::to_string(values.size()));
    }
    return Value::array(std::move(extents), std::move(values));
}

namespace {

Value coerce_scalar(const Value& v, const TypeDescriptor& d) {
    if (!is_scalar_kind(d.code()))
        throw Error(ErrorCode::type_mismatch, "a scalar literal cannot fill a " + std::string(code_name(d.code())));
    if (v.code() == d.code() && d.code() != TypeCode::enumerated) return v;
    ConversionResult r;
    try {
        r = convert(v, *TypeDescriptor::scalar(v.code()), d);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::parse && e.code() != ErrorCode::kind) throw;
        throw Error(ErrorCode::type_mismatch, "literal " + format_literal(v) + " is not a " + signature(d));
    }
    bool lossy = r.detail == ConversionDetail::clamped ||
                 (r.detail == ConversionDetail::rounded && is_integer(d.code()));
    if (lossy) throw Error(ErrorCode::range, "literal " + format_literal(v) + " does not fit " + signature(d));
    return r.value;
}

} // namespace

Value coerce_literal(const Value& literal, const TypeDescriptor& d) {
    if (d.code() == TypeCode::array) {
        if (!literal.is<Array>()) throw Error(ErrorCode::type_mismatch, "an array literal is required");
        const auto& a = literal.as_array();
        if (d.declared_rank() != 0 && a.rank() != d.declared_rank())
            throw Error(ErrorCode::type_mismatch, "array literal of rank " + std::to_string(a.rank()) + " where " +
                                                      std::to_string(d.declared_rank()) + " is declared");
        std::vector<Value> el;
        for (const auto& e : a.elements) el.push_back(coerce_scalar(e, *d.element()));
        return Value::array(a.extents, std::move(el));
    }
    if (literal.is<Array>()) throw Error(ErrorCode::type_mismatch, "array literal for a non-array property");
    if (d.code() == TypeCode::container) throw Error(ErrorCode::type_mismatch, "a container needs field paths");
    return coerce_scalar(literal, d);
}

Value literal_for(std::string_view text, const TypeDescriptor& d) { return coerce_literal(parse_literal(text), d); }

std::string format_literal(const Value& v, const TypeDescriptor* d) {
    switch (v.code()) {
    case TypeCode::boolean: return v.get<bool>() ? "true" : "false";
    case TypeCode::string: {
        std::string out = "\"";
        for (char c : v.get<std::string>()) {
            if (c == '"' || c == '\\') out += '\\';
            if (c == '\n') {
                out += "\\n";
                continue;
            }
            if (c == '\t') {
                out += "\\t";
                continue;
            }
            out += c;
        }
        return out + "\"";
    }
    case TypeCode::enumerated: {
        auto i = v.get<EnumIndex>().index;
        if (d && d->code() == TypeCode::enumerated && i < d->labels().size()) return d->labels()[i];
        return std::to_string(i);
    }
    case TypeCode::container: {
        std::string out = "{";
        const auto& c = v.as_container();
        for (std::size_t i = 0; i < c.fields.size(); ++i) {
            if (i) out += ",";
            const TypeDescriptor* fd = nullptr;
            if (d && d->code() == TypeCode::container)
                if (auto* f = d->field(c.fields[i].name)) fd = f->type.get();
            out += c.fields[i].name + "=" + format_literal(c.fields[i].value, fd);
        }
        return out + "}";
    }
    case TypeCode::array: {
        const auto& a = v.as_array();
        const TypeDescriptor* ed = d && d->code() == TypeCode::array ? d->element().get() : nullptr;
        std::string out = "[";
        for (std::size_t i = 0; i < a.elements.size(); ++i) {
            if (i) out += ",";
            out += format_literal(a.elements[i], ed);
        }
        out += "]";
        if (a.rank() > 1) {
            out += "@";
            for (std::size_t i = 0; i < a.rank(); ++i) out += (i ? "x" : "") + std::to_string(a.extents[i]);
        }
        return out;
    }
    default: return convert(v, TypeCode::string).value.get<std::string>();
    }
}

Value partial_update(const TypeDescriptor& d, const PropertyPath& path, std::string_view literal) {
    if (path.is_root()) throw Error(ErrorCode::invalid_argument, "a property path is required");
    std::vector<const TypeDescriptor*> chain{&d};
    for (const auto& seg : path.segments()) {
        const auto* cur = chain.back();
        const FieldDescriptor* f = cur->code() == TypeCode::container ? cur->field(seg) : nullptr;
        if (!f) throw Error(ErrorCode::absent_path, "'" + path.to_string() + "' is not a property");
        chain.push_back(f->type.get());
    }
    Value v = literal_for(literal, *chain.back());
    for (std::size_t i = path.size(); i-- > 0;) v = Value::container({{path.segments()[i], std::move(v)}});
    return v;
}

void merge_partial(Value& into, const Value& update) {
    if (!into.is<Container>() || !update.is<Container>()) {
        into = update;
        return;
    }
    for (const auto& f : update.as_container().fields) {
        auto* existing = into.as_container().find(f.name);
        if (existing && existing->is<Container>() && f.value.is<Container>()) merge_partial(*existing, f.value);
        else into.as_container().set(f.name, f.value);
    }
}

} // namespace pw
