#pragma once

#include <stdexcept>
#include <string>

namespace adaptparse {

// Raised for malformed shapes, dtype mismatches and violated numeric
// contracts. Maps to exit code 2 in the CLI.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : NumericalError {
    explicit ShapeError(const std::string& msg) : NumericalError(msg) {}
};

// File-format and filesystem failures. Maps to exit code 3 in the CLI.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad command lines and bad configs. Maps to exit code 1 in the CLI.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace adaptparse
