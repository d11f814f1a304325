#pragma once

#include <stdexcept>
#include <string>

namespace vbmc {

struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SearchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct WhiteningError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Carries which point failed plus however much of the run completed.
struct TargetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace vbmc
