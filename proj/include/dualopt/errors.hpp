#pragma once

#include <stdexcept>
#include <string>

namespace dualopt {

// Thrown for anything a user could have gotten wrong before compute starts:
// bad hyperparameter domains, malformed config/checkpoint files, shape
// mismatches. Maps to CLI exit code 1.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Hyperparameter outside its mathematical domain (lambda outside [0,1],
// effective penalty >= 1, ...).
class DomainError : public ConfigError {
public:
    explicit DomainError(const std::string& msg) : ConfigError(msg) {}
};

// Structured file-format error; message names the offending group/field.
class ParseError : public ConfigError {
public:
    explicit ParseError(const std::string& msg) : ConfigError(msg) {}
};

// Vector/tensor shape disagreement between two structures that must match.
class ShapeError : public ConfigError {
public:
    explicit ShapeError(const std::string& msg) : ConfigError(msg) {}
};

// Non-finite values encountered mid-compute (gradient explosion and the
// like). Maps to CLI exit code 2.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace dualopt
