#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dgmark {

enum class ErrorKind {
  invalid_vocabulary,
  invalid_token,
  invalid_query,
  invalid_input,
  invalid_window,
  truncation,
  training,
  config,
  calibration_infeasible,
  degenerate_attack,
  io,
  protocol,
  predictor_failure,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_vocabulary: return "invalid-vocabulary";
    case ErrorKind::invalid_token: return "invalid-token";
    case ErrorKind::invalid_query: return "invalid-query";
    case ErrorKind::invalid_input: return "invalid-input";
    case ErrorKind::invalid_window: return "invalid-window";
    case ErrorKind::truncation: return "truncation";
    case ErrorKind::training: return "training";
    case ErrorKind::config: return "config";
    case ErrorKind::calibration_infeasible: return "calibration-infeasible";
    case ErrorKind::degenerate_attack: return "degenerate-attack";
    case ErrorKind::io: return "io";
    case ErrorKind::protocol: return "protocol";
    case ErrorKind::predictor_failure: return "predictor-failure";
  }
  return "unknown";
}

// Every failure raised by the library carries a kind so callers (the CLI in
// particular) can map it onto exit codes and per-record error entries.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Raised when calibration cannot reach the requested false-positive rate.
class CalibrationInfeasible : public Error {
 public:
  CalibrationInfeasible(const std::string& message, double achievable_floor)
      : Error(ErrorKind::calibration_infeasible, message), floor_(achievable_floor) {}

  double achievable_floor() const noexcept { return floor_; }

 private:
  double floor_;
};

// Decoding aborted because the predictor threw; records the step index.
class DecodeAborted : public Error {
 public:
  DecodeAborted(std::size_t step, const std::string& message)
      : Error(ErrorKind::predictor_failure,
              "decode aborted at step " + std::to_string(step) + ": " + message),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace dgmark
