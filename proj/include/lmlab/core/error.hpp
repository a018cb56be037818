// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <stdexcept>
#include <string>

namespace lmlab {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shapes do not conform.
struct ShapeError : Error {
    using Error::Error;
};

// Math domain violation (log of non-positive, fractional pow of negative, ...).
struct DomainError : Error {
    using Error::Error;
};

// Bad run configuration. Maps to CLI exit code 2.
struct ConfigError : Error {
    using Error::Error;
};

// NaN/Inf encountered where finite values are required. Maps to CLI exit code 3.
struct NumericalError : Error {
    using Error::Error;
};

// Unreadable, mismatched or corrupt checkpoint. Maps to CLI exit code 4.
struct CheckpointError : Error {
    using Error::Error;
};

struct DataError : Error {
    using Error::Error;
};

}  // namespace lmlab
