// SPDX-License-Identifier: Apache-2.0
//
// Error taxonomy and shared checks. Exit-code mapping lives in cli.hpp:
// ConfigError -> 1, DataError -> 2, NumericError -> 3.

#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace seqattn {

// Violated call contract (shape mismatch, non-simplex input, bad token id).
struct ContractViolation : std::logic_error {
    explicit ContractViolation(const std::string& msg) : std::logic_error(msg) {}
};

// Invalid configuration: bad schedule, unknown config key, missing head, ...
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unreadable or inconsistent data on disk (manifest/blob/vocab problems).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values or degenerate numerics at run time.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

template <typename... Args>
std::string format_msg(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

} // namespace detail

#define SEQATTN_CHECK(cond, ...)                                                        \
    do {                                                                                \
        if (!(cond)) throw ::seqattn::ContractViolation(                                \
            ::seqattn::detail::format_msg(__VA_ARGS__));                                \
    } while (0)

#define SEQATTN_CONFIG_CHECK(cond, ...)                                                 \
    do {                                                                                \
        if (!(cond)) throw ::seqattn::ConfigError(                                      \
            ::seqattn::detail::format_msg(__VA_ARGS__));                                \
    } while (0)

#define SEQATTN_DATA_CHECK(cond, ...)                              \
    do {                                                           \
        if (!(cond)) throw ::seqattn::DataError(                   \
            ::seqattn::detail::format_msg(__VA_ARGS__));           \
    } while (0)

} // namespace seqattn
