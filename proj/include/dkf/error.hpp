#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dkf {

enum class Errc {
  kNotDetectable,
  kNotObservable,
  kBadNoise,
  kNoConvergence,
  kUnstable,
  kNotControllable,
  kIllConditioned,
  kPoleClash,
  kDisconnected,
  kInfeasibleCondition,
  kInfeasibleZeta,
  kGainInfeasible,
  kUnstableAugmented,
  kLosslessViolation,
  kDimensionMismatch,
  kInvalidArgument,
  kConfig,
};

inline std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::kNotDetectable: return "NotDetectable";
    case Errc::kNotObservable: return "NotObservable";
    case Errc::kBadNoise: return "BadNoise";
    case Errc::kNoConvergence: return "NoConvergence";
    case Errc::kUnstable: return "Unstable";
    case Errc::kNotControllable: return "NotControllable";
    case Errc::kIllConditioned: return "IllConditioned";
    case Errc::kPoleClash: return "PoleClash";
    case Errc::kDisconnected: return "Disconnected";
    case Errc::kInfeasibleCondition: return "InfeasibleCondition";
    case Errc::kInfeasibleZeta: return "InfeasibleZeta";
    case Errc::kGainInfeasible: return "GainInfeasible";
    case Errc::kUnstableAugmented: return "UnstableAugmented";
    case Errc::kLosslessViolation: return "LosslessViolation";
    case Errc::kDimensionMismatch: return "DimensionMismatch";
    case Errc::kInvalidArgument: return "InvalidArgument";
    case Errc::kConfig: return "ConfigError";
  }
  return "Unknown";
}

/// Exception carrying a machine-readable error code. The message is prefixed
/// with the code name so that CLI diagnostics are greppable.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Process exit status for a failure: 2 bad input, 3 infeasible design,
/// 4 numerical failure.
inline int exit_code(Errc code) {
  switch (code) {
    case Errc::kConfig:
    case Errc::kDimensionMismatch:
    case Errc::kInvalidArgument:
    case Errc::kBadNoise:
      return 2;
    case Errc::kNotObservable:
    case Errc::kNotDetectable:
    case Errc::kDisconnected:
    case Errc::kInfeasibleCondition:
    case Errc::kInfeasibleZeta:
    case Errc::kGainInfeasible:
    case Errc::kPoleClash:
    case Errc::kNotControllable:
      return 3;
    case Errc::kNoConvergence:
    case Errc::kIllConditioned:
    case Errc::kUnstable:
    case Errc::kUnstableAugmented:
    case Errc::kLosslessViolation:
      return 4;
  }
  return 4;
}

}  // namespace dkf
