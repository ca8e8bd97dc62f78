#pragma once

#include <stdexcept>
#include <string>

namespace stainkit {

enum class ErrorCode {
  Io = 1,
  InvalidArgument,
  BadFormat,
  ShapeMismatch,
  DimensionMismatch,
  WindowTooLarge,
  DegenerateTemplate,
  DegenerateInput,
  InsufficientTissue,
  NumericalFailure,
  TooFewSamples,
  BadWeights,
  EpochOutOfRange,
  NonFiniteLoss,
  SourceTooSmall,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, std::string message)
      : std::runtime_error(std::move(message)), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace stainkit
