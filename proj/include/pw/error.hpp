// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>

namespace pw {

enum class ErrorCode : std::uint16_t {
    ok = 0,
    path_syntax = 1,
    absent_path = 2,
    handle_mismatch = 3,
    type_mismatch = 4,
    access = 5,
    invalid_descriptor = 6,
    parse = 7,
    kind = 8,
    range = 9,
    strict_copy = 10,
    duplicate_name = 11,
    unknown_pv = 12,
    unknown_event = 13,
    protocol = 14,
    decode = 15,
    disconnected = 16,
    timeout = 17,
    overflow = 18,
    invalid_argument = 19,
    transport = 20,
    config = 21,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Exception carrying a stable error code. All synchronous library entry
/// points report failures by throwing this (or a subclass).
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Raised by the wire decoders; offset is the byte position of the fault.
class DecodeError : public Error {
public:
    DecodeError(std::size_t offset, const std::string& message)
        : Error(ErrorCode::decode, message + " at offset " + std::to_string(offset)),
          offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Plain error value used by asynchronous completions.
struct Failure {
    ErrorCode code = ErrorCode::ok;
    std::string message;
};

/// Either a value or a Failure. Used where errors cross thread boundaries.
template <class T>
class Result {
public:
    Result(T value) : data_(std::move(value)) {}
    Result(Failure failure) : data_(std::move(failure)) {}

    bool ok() const noexcept { return data_.index() == 0; }
    explicit operator bool() const noexcept { return ok(); }

    const T& value() const& {
        if (!ok()) throw Error(error().code, error().message);
        return std::get<0>(data_);
    }
    T&& value() && {
        if (!ok()) throw Error(error().code, error().message);
        return std::get<0>(std::move(data_));
    }
    const T& operator*() const& { return value(); }
    const T* operator->() const { return &value(); }

    const Failure& error() const { return std::get<1>(data_); }

private:
    std::variant<T, Failure> data_;
};

struct Done {};

} // namespace pw
