#pragma once

#include <stdexcept>
#include <string>

namespace l2p {

/// Shapes of operands do not agree.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Caller-supplied data is out of range (labels, image sizes, empty sets).
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A configuration or hyperparameter is invalid. Messages name the field.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Vectors with (near) zero norm where a direction is required.
struct DegenerateInputError : std::domain_error {
  using std::domain_error::domain_error;
};

/// An object was used in a state that does not permit the call.
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Malformed or truncated file contents.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace l2p
