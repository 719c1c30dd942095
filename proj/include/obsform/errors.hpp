#pragma once

#include <stdexcept>
#include <string>

namespace obsform {

/// Syntax or semantic error while reading an expression or a system file.
/// Positions are 1-based; column 0 means "unknown".
class ParseError : public std::runtime_error {
public:
  ParseError(std::string message, int line, int column)
      : std::runtime_error(format(message, line, column)),
        line_(line),
        column_(column) {}

  int line() const { return line_; }
  int column() const { return column_; }

private:
  static std::string format(const std::string& message, int line, int column) {
    std::string s = message;
    if (line > 0) {
      s += " (line " + std::to_string(line);
      if (column > 0) s += ", column " + std::to_string(column);
      s += ")";
    }
    return s;
  }

  int line_;
  int column_;
};

/// Numeric evaluation left the domain of an expression (even root of a
/// negative base, division by zero, log of a non-positive value, ...).
class DomainError : public std::runtime_error {
public:
  explicit DomainError(const std::string& message) : std::runtime_error(message) {}
};

/// Invalid run configuration (missing fields, non-positive tolerances, ...).
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& message) : std::runtime_error(message) {}
};

/// A simulated trajectory left the declared box or blew up.
class TrajectoryError : public std::runtime_error {
public:
  explicit TrajectoryError(const std::string& message) : std::runtime_error(message) {}
};

}  // namespace obsform
