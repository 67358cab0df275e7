#pragma once

#include <stdexcept>
#include <string>

namespace crivet {

// Bad input data or configuration: CLI exit code 2.
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Fit did not converge, separation, exhausted censoring support: CLI exit code 3.
class NumericalError : public std::runtime_error {
public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Unreadable/unwritable files: CLI exit code 1.
class IoError : public std::runtime_error {
public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace crivet
