#pragma once

#include <stdexcept>
#include <string>

namespace covloc {

/// Emitter coincides with an antenna, or candidate positions collide.
class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A linear system or bound that should be well posed is not.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The bound is not defined for the scenario (more emitters than antennas).
class BoundUndefinedError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Fisher information is numerically singular.
class RankDeficiencyError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Malformed or out-of-range configuration. `where` is a JSON pointer
/// (e.g. "/scenario/noise_variance") or "line N, column M" for syntax errors.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string where, const std::string& what)
      : std::runtime_error(where + ": " + what), where_(std::move(where)) {}

  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

}  // namespace covloc
