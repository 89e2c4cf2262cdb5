#pragma once

#include <stdexcept>
#include <string>

namespace semiseg {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// invalid or inconsistent configuration values
struct ConfigError : Error {
  using Error::Error;
};

// tensor/graph shape mismatches
struct ShapeError : Error {
  using Error::Error;
};

// file parse failures, truncated checkpoints, bad manifests
struct IoError : Error {
  using Error::Error;
};

// non-finite values during forward/backward, bad optimizer state
struct TrainingError : Error {
  using Error::Error;
};

// illegal stage wiring (e.g. forbidden checkpoint source for a stage)
struct StageError : Error {
  using Error::Error;
};

// phantom generation could not satisfy its geometric contracts
struct GenerationError : Error {
  using Error::Error;
};

}  // namespace semiseg
