#pragma once

#include <stdexcept>
#include <string>

namespace calibless {

/// Invalid argument, shape or configuration value.
class ParameterError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// NaN or Inf encountered where finite values are required.
class NonFiniteError : public std::domain_error
{
public:
  using std::domain_error::domain_error;
};

/// ESPIRiT calibration could not produce a map set.
class CalibrationError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Power iteration or another solver hit a degenerate operator.
class SolverError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Training diverged; carries the epoch of the last finite checkpoint.
class DivergenceError : public std::runtime_error
{
public:
  DivergenceError(std::string const &msg, int last_good_epoch)
      : std::runtime_error(msg), last_good_epoch(last_good_epoch)
  {
  }
  int last_good_epoch;
};

/// Container or checkpoint I/O failure. `field` names the offending item.
class IoError : public std::runtime_error
{
public:
  IoError(std::string field, std::string const &msg)
      : std::runtime_error(field + ": " + msg), field(std::move(field))
  {
  }
  std::string field;
};

inline void require(bool cond, std::string const &msg)
{
  if (!cond) throw ParameterError(msg);
}

} // namespace calibless
