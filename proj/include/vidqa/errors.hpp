#pragma once

#include <stdexcept>
#include <string>

namespace vidqa {

// Tensor/model dimension disagreements. Messages name both offending shapes.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed files on disk. Messages carry the byte offset of the defect.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad or inconsistent run configuration (unknown keys, empty lexicon, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operation not legal in the current object state (e.g. updating frozen params).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite values or degenerate numeric inputs (zero-norm normalize, ...).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dataset-level problems: missing artifacts, id mismatches, bad labels.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vidqa
