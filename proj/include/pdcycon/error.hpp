#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pdcycon {

enum class ErrorCode {
  MissingFile,
  MalformedRow,
  DuplicateId,
  BadMagic,
  TruncatedPayload,
  NonFiniteSample,
  DimMismatch,
  WindowTooLarge,
  NoZeroCrossing,
  LengthMismatch,
  InputTooSmall,
  ShapeMismatch,
  PeakAxisMismatch,
  ClassTooSmall,
  MissingCheckpoint,
  InvalidConfig,
  IoError,
  NumericFailure,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers (tests, the CLI exit-code mapping) can branch on kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace pdcycon
