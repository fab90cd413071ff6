#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cianet {

/// Shape or extent mismatch. `axis()` names the offending dimension.
class DimensionError : public std::invalid_argument {
 public:
  DimensionError(std::string axis, const std::string& what)
      : std::invalid_argument("dimension error on axis " + axis + ": " + what), axis_(std::move(axis)) {}
  const std::string& axis() const { return axis_; }

 private:
  std::string axis_;
};

/// Caller broke an operation's precondition (e.g. backward from a non-scalar).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Argument outside the mathematical domain of a function.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Malformed input file; carries the file name and the byte offset.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string file, std::size_t offset, const std::string& what)
      : std::runtime_error(file + " @" + std::to_string(offset) + ": " + what),
        file_(std::move(file)),
        offset_(offset) {}
  const std::string& file() const { return file_; }
  std::size_t offset() const { return offset_; }

 private:
  std::string file_;
  std::size_t offset_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Configuration rejected before any work is done.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Synthetic generator could not place the requested objects.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cianet
