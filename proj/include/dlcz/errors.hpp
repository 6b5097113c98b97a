#pragma once

#include <stdexcept>
#include <string>

namespace dlcz {

// Parameter outside the domain where a formula or state is defined.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Caller passed structurally invalid arguments (bad mode indices etc).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Conditioning on an outcome that has zero probability.
class ConditioningError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Not enough data for a counting estimator.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Fringe fit failed (non-positive mean rate or singular design).
class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Loss inversion produced a negative probability or an over-large coherence.
class UnphysicalInversion : public std::runtime_error {
 public:
  UnphysicalInversion(std::string element, double value)
      : std::runtime_error("unphysical inversion: " + element + " = " + std::to_string(value)),
        element_(std::move(element)),
        value_(value) {}

  const std::string& element() const noexcept { return element_; }
  double value() const noexcept { return value_; }

 private:
  std::string element_;
  double value_;
};

// Record file that is cut short or does not follow the record format.
class RecordFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dlcz
