#pragma once

#include <stdexcept>
#include <string>

namespace freqnet {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed models, formulas or structures (sort errors, cycles, bad parameters).
struct ModelError : Error {
  using Error::Error;
};

// An enumeration would exceed the configured atom cap.
struct CapExceeded : Error {
  using Error::Error;
};

// No partition case, or more than one, holds for a ground atom.
struct PartitionViolation : Error {
  using Error::Error;
};

// Conditioning on evidence of probability zero (exact) or with all weights zero (sampling).
struct ZeroProbabilityEvidence : Error {
  using Error::Error;
};

// A frequency comparison whose limiting values coincide; no asymptotic statement is possible.
struct CriticalThreshold : Error {
  using Error::Error;
};

// Parameter fitting produced a NaN log-likelihood or gradient.
struct FitDivergence : Error {
  using Error::Error;
};

}  // namespace freqnet
