#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace blefuse {

/// Every failure the library reports carries one of these kinds. The CLI maps
/// them onto exit-code families, so adding a kind means updating `exit_code_for`.
enum class ErrorKind {
  InvalidParams,
  InvalidDistance,
  DegenerateSamples,
  UnsortedInput,
  UnknownDevice,
  EmptyWindow,
  InvalidCutoff,
  ReversedInterval,
  EmptyInput,
  IoError,
  SchemaError,
  EmptyBundle,
  NoOverlap,
  NoRegionSamples,
  InvalidConfig,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidParams: return "invalid-params";
    case ErrorKind::InvalidDistance: return "invalid-distance";
    case ErrorKind::DegenerateSamples: return "degenerate-samples";
    case ErrorKind::UnsortedInput: return "unsorted-input";
    case ErrorKind::UnknownDevice: return "unknown-device";
    case ErrorKind::EmptyWindow: return "empty-window";
    case ErrorKind::InvalidCutoff: return "invalid-cutoff";
    case ErrorKind::ReversedInterval: return "reversed-interval";
    case ErrorKind::EmptyInput: return "empty-input";
    case ErrorKind::IoError: return "io-error";
    case ErrorKind::SchemaError: return "schema-error";
    case ErrorKind::EmptyBundle: return "empty-bundle";
    case ErrorKind::NoOverlap: return "no-overlap";
    case ErrorKind::NoRegionSamples: return "no-region-samples";
    case ErrorKind::InvalidConfig: return "invalid-config";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised when an internal invariant is found broken (a bug, not bad input).
class InvariantViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace blefuse
