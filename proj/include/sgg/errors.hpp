#pragma once

#include <stdexcept>
#include <string>

namespace sgg {

// Bad input: malformed files, broken invariants, inconsistent configs.
// The CLI maps this class to exit code 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Failures at run time: I/O, numeric domain violations, non-finite values.
// The CLI maps this class to exit code 2.
class RuntimeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Numeric domain violation (e.g. log of a nonpositive ratio).
class DomainError : public RuntimeError {
public:
    using RuntimeError::RuntimeError;
};

} // namespace sgg
