#pragma once

#include <stdexcept>
#include <string>

namespace lf {

/// Shape or dimensionality violation; the message names the offending sizes.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value or a violated configuration invariant.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dataset problem (missing file, decode failure, size mismatch); message carries the path.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Violated call contract (non-scalar loss, wrong grow position, ...).
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Checkpoint file cannot be parsed or does not match the target model.
struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Box with non-positive extent where a proper box is required.
struct DegenerateBoxError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace lf
