#pragma once

#include <stdexcept>
#include <string>

namespace shill {

// Malformed input files (bad line, wrong field count, non-numeric token).
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Violated preconditions or domain constraints (rating range, empty result,
// inconsistent budget, unknown labels).
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite loss or gradient during training.
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace shill
