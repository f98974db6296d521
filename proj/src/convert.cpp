// SPDX-License-Identifier: Apache-2.0
#include <charconv>
#include <cmath>
#include <cstring>
#include <limits>

#include "pw/transform.hpp"

namespace pw {

std::string_view to_string(ConversionDetail detail) noexcept {
    switch (detail) {
    case ConversionDetail::exact: return "exact";
    case ConversionDetail::rounded: return "rounded";
    case ConversionDetail::clamped: return "clamped";
    case ConversionDetail::parsed: return "parsed";
    case ConversionDetail::formatted: return "formatted";
    }
    return "unknown";
}

namespace {

using i128 = __int128;

struct IntRange {
    i128 lo;
    i128 hi;
};

IntRange range_of(TypeCode c) {
    switch (c) {
    case TypeCode::i8: return {INT8_MIN, INT8_MAX};
    case TypeCode::i16: return {INT16_MIN, INT16_MAX};
    case TypeCode::i32: return {INT32_MIN, INT32_MAX};
    case TypeCode::i64: return {INT64_MIN, INT64_MAX};
    case TypeCode::u8: return {0, UINT8_MAX};
    case TypeCode::u16: return {0, UINT16_MAX};
    case TypeCode::u32: return {0, UINT32_MAX};
    case TypeCode::u64: return {0, static_cast<i128>(UINT64_MAX)};
    default: return {0, 0};
    }
}

Value make_integer(TypeCode c, i128 x) {
    switch (c) {
    case TypeCode::i8: return Value(static_cast<std::int8_t>(x));
    case TypeCode::i16: return Value(static_cast<std::int16_t>(x));
    case TypeCode::i32: return Value(static_cast<std::int32_t>(x));
    case TypeCode::i64: return Value(static_cast<std::int64_t>(x));
    case TypeCode::u8: return Value(static_cast<std::uint8_t>(x));
    case TypeCode::u16: return Value(static_cast<std::uint16_t>(x));
    case TypeCode::u32: return Value(static_cast<std::uint32_t>(x));
    case TypeCode::u64: return Value(static_cast<std::uint64_t>(x));
    default: throw Error(ErrorCode::kind, "not an integer code");
    }
}

/// Numeric view of a scalar source, before targeting.
struct Number {
    bool is_int = true;
    i128 i = 0;
    double f = 0.0;
};

ConversionResult with(Value v, ConversionDetail d) {
    bool lossy = d == ConversionDetail::rounded || d == ConversionDetail::clamped;
    return {std::move(v), lossy, d};
}

ConversionResult int_to_int(i128 x, TypeCode to) {
    auto r = range_of(to);
    if (x < r.lo) return with(make_integer(to, r.lo), ConversionDetail::clamped);
    if (x > r.hi) return with(make_integer(to, r.hi), ConversionDetail::clamped);
    return with(make_integer(to, x), ConversionDetail::exact);
}

double round_half_even(double x) {
    double lower = std::floor(x);
    double frac = x - lower;
    if (frac > 0.5) return lower + 1.0;
    if (frac < 0.5) return lower;
    return std::fmod(lower, 2.0) == 0.0 ? lower : lower + 1.0;
}

ConversionResult float_to_int(double x, TypeCode to) {
    if (std::isnan(x)) throw Error(ErrorCode::range, "NaN has no integer value");
    auto r = range_of(to);
    if (std::isinf(x)) return with(make_integer(to, x > 0 ? r.hi : r.lo), ConversionDetail::clamped);
    double rounded = round_half_even(x);
    // long double holds every 64-bit integer exactly on the supported targets.
    auto lr = static_cast<long double>(rounded);
    if (lr < static_cast<long double>(r.lo)) return with(make_integer(to, r.lo), ConversionDetail::clamped);
    if (lr > static_cast<long double>(r.hi)) return with(make_integer(to, r.hi), ConversionDetail::clamped);
    auto value = static_cast<i128>(rounded);
    return with(make_integer(to, value), rounded == x ? ConversionDetail::exact : ConversionDetail::rounded);
}

ConversionResult int_to_float(i128 x, TypeCode to) {
    if (to == TypeCode::f32) {
        auto f = static_cast<float>(x);
        return with(Value(f), static_cast<i128>(f) == x ? ConversionDetail::exact : ConversionDetail::rounded);
    }
    auto d = static_cast<double>(x);
    return with(Value(d), static_cast<i128>(d) == x ? ConversionDetail::exact : ConversionDetail::rounded);
}

ConversionResult float_to_float(double x, TypeCode to) {
    if (to == TypeCode::f64) return with(Value(x), ConversionDetail::exact);
    if (std::isnan(x)) return with(Value(std::numeric_limits<float>::quiet_NaN()), ConversionDetail::exact);
    constexpr double fmax = std::numeric_limits<float>::max();
    if (std::isfinite(x) && std::fabs(x) > fmax)
        return with(Value(static_cast<float>(x > 0 ? fmax : -fmax)), ConversionDetail::clamped);
    auto f = static_cast<float>(x);
    return with(Value(f), static_cast<double>(f) == x ? ConversionDetail::exact : ConversionDetail::rounded);
}

ConversionResult number_to_bool(const Number& n) {
    bool zero = n.is_int ? n.i == 0 : n.f == 0.0;
    bool one = n.is_int ? n.i == 1 : n.f == 1.0;
    if (zero) return with(Value(false), ConversionDetail::exact);
    return with(Value(true), one ? ConversionDetail::exact : ConversionDetail::clamped);
}

ConversionResult number_to_enum(const Number& n, const TypeDescriptor& to) {
    i128 index;
    if (n.is_int) {
        index = n.i;
    } else {
        if (!std::isfinite(n.f) || n.f != std::floor(n.f))
            throw Error(ErrorCode::range, "non-integral value has no enumerated index");
        if (n.f < 0 || n.f >= 65536.0) throw Error(ErrorCode::range, "enumerated index out of range");
        index = static_cast<i128>(n.f);
    }
    if (index < 0 || index >= static_cast<i128>(to.labels().size()))
        throw Error(ErrorCode::range, "enumerated index out of range");
    return with(Value::enumerated(static_cast<std::uint16_t>(index)), ConversionDetail::exact);
}

ConversionResult number_to(const Number& n, const TypeDescriptor& to) {
    auto t = to.code();
    if (t == TypeCode::boolean) return number_to_bool(n);
    if (t == TypeCode::enumerated) return number_to_enum(n, to);
    if (is_integer(t)) return n.is_int ? int_to_int(n.i, t) : float_to_int(n.f, t);
    if (is_float(t)) return n.is_int ? int_to_float(n.i, t) : float_to_float(n.f, t);
    throw Error(ErrorCode::kind, "cannot convert to " + std::string(code_name(t)));
}

template <class T>
std::string format_number(T x) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, end);
}

std::string format_scalar(const Value& v, const TypeDescriptor& from) {
    return std::visit(
        [&](const auto& x) -> std::string {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, bool>) return x ? "true" : "false";
            else if constexpr (std::is_same_v<T, std::int8_t>) return format_number(static_cast<int>(x));
            else if constexpr (std::is_same_v<T, std::uint8_t>) return format_number(static_cast<unsigned>(x));
            else if constexpr (std::is_arithmetic_v<T>) return format_number(x);
            else if constexpr (std::is_same_v<T, std::string>) return x;
            else if constexpr (std::is_same_v<T, EnumIndex>) {
                if (from.code() != TypeCode::enumerated || x.index >= from.labels().size())
                    throw Error(ErrorCode::kind, "enumerated value needs its labels to format");
                return from.labels()[x.index];
            } else {
                throw Error(ErrorCode::kind, "cannot format " + std::string(code_name(v.code())));
            }
        },
        v.storage());
}

/// Optional sign, digits with optional fraction, optional exponent.
bool is_decimal_syntax(std::string_view s, bool& integral) {
    std::size_t i = 0;
    integral = true;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
    std::size_t int_digits = 0, frac_digits = 0;
    while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i, ++int_digits;
    if (i < s.size() && s[i] == '.') {
        integral = false;
        ++i;
        while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i, ++frac_digits;
    }
    if (int_digits + frac_digits == 0) return false;
    if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
        integral = false;
        ++i;
        if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
        std::size_t exp_digits = 0;
        while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i, ++exp_digits;
        if (exp_digits == 0) return false;
    }
    return i == s.size();
}

struct Parsed {
    Number number;
    bool saturated = false;
};

/// Parses decimal text. Integers too large for 128 bits saturate at ±2^100,
/// which lies outside every target range and therefore clamps downstream.
Parsed parse_decimal(std::string_view s) {
    bool integral = true;
    if (!is_decimal_syntax(s, integral)) throw Error(ErrorCode::parse, "not a decimal number: '" + std::string(s) + "'");
    Parsed p;
    bool negative = !s.empty() && s[0] == '-';
    std::string_view body = (!s.empty() && (s[0] == '+' || s[0] == '-')) ? s.substr(1) : s;
    if (integral) {
        constexpr i128 cap = static_cast<i128>(1) << 100;
        i128 acc = 0;
        for (char c : body) {
            acc = acc * 10 + (c - '0');
            if (acc > cap) {
                acc = cap;
                p.saturated = true;
                break;
            }
        }
        p.number.is_int = true;
        p.number.i = negative ? -acc : acc;
        return p;
    }
    double d = 0;
    auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), d);
    if (ec == std::errc::result_out_of_range) {
        // Decide overflow versus underflow from the decimal magnitude.
        auto epos = body.find_first_of("eE");
        std::string_view mant = body.substr(0, epos);
        long exp10 = 0;
        if (epos != std::string_view::npos) {
            auto e = body.substr(epos + 1);
            bool eneg = !e.empty() && e[0] == '-';
            if (!e.empty() && (e[0] == '+' || e[0] == '-')) e.remove_prefix(1);
            for (char c : e) exp10 = std::min<long>(exp10 * 10 + (c - '0'), 100000);
            if (eneg) exp10 = -exp10;
        }
        auto dot = mant.find('.');
        std::string_view ip = mant.substr(0, dot);
        auto first = ip.find_first_not_of('0');
        long magnitude = first == std::string_view::npos ? -1 : static_cast<long>(ip.size() - first);
        d = (magnitude + exp10 > 0) ? std::numeric_limits<double>::infinity() : 0.0;
        p.saturated = d != 0.0;
    } else if (ec != std::errc() || ptr != body.data() + body.size()) {
        throw Error(ErrorCode::parse, "not a decimal number: '" + std::string(s) + "'");
    }
    p.number.is_int = false;
    p.number.f = negative ? -d : d;
    return p;
}

template <class F>
ConversionResult parse_float_as(std::string_view s) {
    bool integral = true;
    if (!is_decimal_syntax(s, integral)) throw Error(ErrorCode::parse, "not a decimal number: '" + std::string(s) + "'");
    bool negative = s[0] == '-';
    if (s[0] == '+' || s[0] == '-') s.remove_prefix(1);
    F x = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec == std::errc::result_out_of_range) {
        // Overflow or underflow: tell them apart by the decimal magnitude.
        auto parsed = parse_decimal(s);
        bool huge = parsed.number.is_int || parsed.saturated || std::fabs(parsed.number.f) >= 1.0;
        if (huge) {
            F lim = std::numeric_limits<F>::max();
            return with(Value(negative ? -lim : lim), ConversionDetail::clamped);
        }
        return with(Value(negative ? -F(0) : F(0)), ConversionDetail::parsed);
    }
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw Error(ErrorCode::parse, "not a decimal number: '" + std::string(s) + "'");
    return with(Value(negative ? -x : x), ConversionDetail::parsed);
}

ConversionResult parse_float(std::string_view s, TypeCode t) {
    return t == TypeCode::f32 ? parse_float_as<float>(s) : parse_float_as<double>(s);
}

ConversionResult from_string(const std::string& s, const TypeDescriptor& to) {
    auto t = to.code();
    if (t == TypeCode::string) return with(Value(s), ConversionDetail::exact);
    if (t == TypeCode::enumerated) {
        for (std::size_t i = 0; i < to.labels().size(); ++i)
            if (to.labels()[i] == s)
                return with(Value::enumerated(static_cast<std::uint16_t>(i)), ConversionDetail::parsed);
        throw Error(ErrorCode::parse, "'" + s + "' is not a label of the target enumeration");
    }
    if (t == TypeCode::boolean) {
        if (s == "true") return with(Value(true), ConversionDetail::parsed);
        if (s == "false") return with(Value(false), ConversionDetail::parsed);
    }
    if (!is_scalar_kind(t)) throw Error(ErrorCode::kind, "cannot convert to " + std::string(code_name(t)));

    if (is_float(t)) return parse_float(s, t);

    auto parsed = parse_decimal(s);
    ConversionResult r = number_to(parsed.number, to);
    if (parsed.saturated && r.detail != ConversionDetail::clamped) r = with(std::move(r.value), ConversionDetail::clamped);
    // Decimal text is the input format, so a non-saturating parse reports parsed.
    if (r.detail == ConversionDetail::exact)
        r = with(std::move(r.value), ConversionDetail::parsed);
    return r;
}

Number number_of(const Value& v) {
    return std::visit(
        [&](const auto& x) -> Number {
            using T = std::decay_t<decltype(x)>;
            Number n;
            if constexpr (std::is_same_v<T, bool>) {
                n.i = x ? 1 : 0;
            } else if constexpr (std::is_integral_v<T>) {
                n.i = static_cast<i128>(x);
            } else if constexpr (std::is_floating_point_v<T>) {
                n.is_int = false;
                n.f = static_cast<double>(x);
            } else if constexpr (std::is_same_v<T, EnumIndex>) {
                n.i = x.index;
            } else {
                throw Error(ErrorCode::kind, "not a numeric value");
            }
            return n;
        },
        v.storage());
}

} // namespace

ConversionResult convert(const Value& v, const TypeDescriptor& from, const TypeDescriptor& to) {
    auto f = v.code();
    auto t = to.code();
    if (!is_scalar_kind(f) || !is_scalar_kind(t))
        throw Error(ErrorCode::kind, "convert needs scalar kinds, got " + std::string(code_name(f)) + " -> " +
                                         std::string(code_name(t)));
    if (from.code() != f)
        throw Error(ErrorCode::type_mismatch, "value is " + std::string(code_name(f)) + " but descriptor says " +
                                                  std::string(code_name(from.code())));
    if (f == t) {
        if (f != TypeCode::enumerated || from.labels() == to.labels()) {
            if (f == TypeCode::enumerated && v.get<EnumIndex>().index >= to.labels().size())
                throw Error(ErrorCode::range, "enumerated index out of range");
            return with(v, ConversionDetail::exact);
        }
        // Differently labelled enumerations map by label.
        auto idx = v.get<EnumIndex>().index;
        if (idx >= from.labels().size()) throw Error(ErrorCode::range, "enumerated index out of range");
        const auto& label = from.labels()[idx];
        for (std::size_t i = 0; i < to.labels().size(); ++i)
            if (to.labels()[i] == label) return with(Value::enumerated(static_cast<std::uint16_t>(i)), ConversionDetail::exact);
        throw Error(ErrorCode::range, "label '" + label + "' does not exist in the target enumeration");
    }
    if (t == TypeCode::string) return with(Value(format_scalar(v, from)), ConversionDetail::formatted);
    if (f == TypeCode::string) return from_string(v.get<std::string>(), to);
    if (f == TypeCode::enumerated && v.get<EnumIndex>().index >= from.labels().size())
        throw Error(ErrorCode::range, "enumerated index out of range");
    return number_to(number_of(v), to);
}

ConversionResult convert(const Value& v, TypeCode target) {
    if (!is_scalar_kind(v.code()) || !is_scalar_kind(target))
        throw Error(ErrorCode::kind, "convert needs scalar kinds, got " + std::string(code_name(v.code())) + " -> " +
                                         std::string(code_name(target)));
    if (target == TypeCode::enumerated)
        throw Error(ErrorCode::kind, "an enumerated target needs labels; pass its descriptor");
    DescriptorPtr from;
    if (v.code() == TypeCode::enumerated) {
        // Index-only view: labels are unknown, so formatting is refused.
        if (target == TypeCode::string) throw Error(ErrorCode::kind, "enumerated value needs its labels to format");
        from = TypeDescriptor::enumerated(std::vector<std::string>(v.get<EnumIndex>().index + 1u, "_"));
    } else {
        from = TypeDescriptor::scalar(v.code());
    }
    return convert(v, *from, *TypeDescriptor::scalar(target));
}

bool widens_exactly(TypeCode from, TypeCode to) noexcept {
    if (from == to) return is_scalar_kind(from);
    auto bits = [](TypeCode c) -> int {
        switch (c) {
        case TypeCode::i8: case TypeCode::u8: return 8;
        case TypeCode::i16: case TypeCode::u16: return 16;
        case TypeCode::i32: case TypeCode::u32: return 32;
        case TypeCode::i64: case TypeCode::u64: return 64;
        default: return 0;
        }
    };
    if (from == TypeCode::boolean) return is_numeric(to);
    if (is_integer(from) && is_integer(to)) {
        bool fs = is_signed_integer(from), ts = is_signed_integer(to);
        if (fs == ts) return bits(to) >= bits(from);
        return !fs && ts && bits(to) > bits(from);
    }
    if (is_integer(from) && to == TypeCode::f64) return bits(from) <= 32;
    if (is_integer(from) && to == TypeCode::f32) return bits(from) <= 16;
    if (from == TypeCode::f32 && to == TypeCode::f64) return true;
    return false;
}

} // namespace pw
