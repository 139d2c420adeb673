#pragma once

#include <stdexcept>
#include <string>

namespace gefl {

// Extent or length mismatch between tensors, networks or parameter vectors.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Argument outside the admissible domain (bad label, empty batch, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// NaN or Inf produced by a public operation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid combination of settings (experiment config, model family, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operation invoked on the wrong model family.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace gefl
