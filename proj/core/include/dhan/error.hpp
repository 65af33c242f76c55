#pragma once

#include <stdexcept>
#include <string>

namespace dhan {

// Mismatched or invalid tensor shapes; the message carries both shapes.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A broken operation contract (non-scalar loss, unwatched parameter, ...).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Malformed input data; the message carries the line number or field name.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid run configuration; the message names the offending key.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical breakdown: non-finite values, degenerate softmax rows, ...
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dhan
