#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fmukf {

enum class ErrorCode {
  NonFiniteState,
  InvalidParams,
  Diverged,
  DegenerateNormalizer,
  PoolExhausted,
  IoError,
  NotPositiveDefinite,
  SingularInnovation,
  ModelFailure,
  StatsNotFitted,
  SequenceTooLong,
  TrajectoryTooShort,
  DegenerateFeature,
  NonFiniteLoss,
  UnknownSensorConfig,
  LengthMismatch,
  ConfigError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonFiniteState: return "NonFiniteState";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::DegenerateNormalizer: return "DegenerateNormalizer";
    case ErrorCode::PoolExhausted: return "PoolExhausted";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::SingularInnovation: return "SingularInnovation";
    case ErrorCode::ModelFailure: return "ModelFailure";
    case ErrorCode::StatsNotFitted: return "StatsNotFitted";
    case ErrorCode::SequenceTooLong: return "SequenceTooLong";
    case ErrorCode::TrajectoryTooShort: return "TrajectoryTooShort";
    case ErrorCode::DegenerateFeature: return "DegenerateFeature";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::UnknownSensorConfig: return "UnknownSensorConfig";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

/// All library failures are reported through this exception type; `code()`
/// identifies the failure class so callers can recover selectively.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fmukf
