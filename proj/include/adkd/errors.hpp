#pragma once

#include <stdexcept>
#include <string>

namespace adkd {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

// NaN/Inf produced by an op.
struct NumericError : Error {
  using Error::Error;
};

// A gradient sweep reached an op without a registered derivative.
struct NonDifferentiableError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

// Invalid configuration or usage; the CLI maps this to exit code 2.
struct ConfigError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace adkd
