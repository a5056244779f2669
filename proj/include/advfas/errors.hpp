#pragma once

#include <stdexcept>
#include <string>

namespace advfas {

// Argument outside the mathematical domain of an operation (scores outside
// [0,1], delta >= 1, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Invalid configuration value. `field()` names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Reverse-mode graph misuse: non-scalar root, loss disconnected from the
// requested leaves.
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite loss or gradient during training/attacks.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File-format errors for checkpoints and dataset files.
class LoadError : public std::runtime_error {
 public:
  enum class Kind { kIo, kBadMagic, kUnsupportedVersion, kTruncated, kShapeMismatch, kMalformed };

  LoadError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace advfas
