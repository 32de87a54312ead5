#pragma once

#include <stdexcept>
#include <string>

namespace trk {

// All library failures derive from trk::Error so callers can catch one type.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

class InvalidArgument : public Error {
public:
  using Error::Error;
  const char* kind() const noexcept override { return "invalid_argument"; }
};

class DimensionMismatch : public Error {
public:
  using Error::Error;
  const char* kind() const noexcept override { return "dimension_mismatch"; }
};

class SingularMatrix : public Error {
public:
  using Error::Error;
  const char* kind() const noexcept override { return "singular_matrix"; }
};

class NotPositiveSemidefinite : public Error {
public:
  using Error::Error;
  const char* kind() const noexcept override { return "not_positive_semidefinite"; }
};

// A distribution collapsed to a point mass where a density is required.
class DegenerateDistribution : public Error {
public:
  using Error::Error;
  const char* kind() const noexcept override { return "degenerate_distribution"; }
};

// P_T has mass where P_ST has none; the entropy of the singular part is not computed.
class SingularPartUnsupported : public Error {
public:
  using Error::Error;
  const char* kind() const noexcept override { return "singular_part_unsupported"; }
};

class ConvergenceError : public Error {
public:
  ConvergenceError(const std::string& what, double last_violation)
      : Error(what), last_violation_(last_violation) {}
  const char* kind() const noexcept override { return "convergence"; }
  double last_violation() const noexcept { return last_violation_; }

private:
  double last_violation_;
};

class ParseError : public Error {
public:
  using Error::Error;
  const char* kind() const noexcept override { return "parse"; }
};

}  // namespace trk
