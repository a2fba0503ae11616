// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace fedpeft {

/// Operand shapes do not conform to an op's algebraic rule.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// A caller broke an API contract (wrong vector length, missing gradient, ...).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

/// Bad user-facing input: out-of-range label, unknown mode, invalid spec.
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Malformed config file or invalid configuration values.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed data file; message carries a byte offset or line number.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace fedpeft
