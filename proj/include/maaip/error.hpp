#pragma once

#include <stdexcept>
#include <string>

namespace maaip {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

// Raised when integration produced a non-finite quantity.
class SimulationDiverged : public Error {
 public:
  SimulationDiverged(std::string quantity)
      : Error("simulation diverged: non-finite " + quantity),
        quantity_(std::move(quantity)) {}

  const std::string& quantity() const noexcept { return quantity_; }

 private:
  std::string quantity_;
};

}  // namespace maaip
