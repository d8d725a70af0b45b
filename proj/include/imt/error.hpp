#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace imt {

enum class ErrorCode {
  ShapeMismatch,
  InvalidAxis,
  IndexOutOfRange,
  TokenOutOfRange,
  DegenerateBatch,
  NonScalarLoss,
  NoTape,
  InvalidUtf8,
  EmptyCorpus,
  LineCountMismatch,
  IoFailure,
  BatchTooSmall,
  BatchMismatch,
  LengthExceeded,
  MaskAllFalse,
  EmptyRow,
  UnknownDistanceKind,
  IndivisibleDim,
  DuplicateModule,
  ParameterAliasing,
  MissingModule,
  DimMismatch,
  VocabFingerprintMismatch,
  BadMagic,
  VersionUnsupported,
  ChecksumMismatch,
  DecoderNotFrozen,
  EmptyDevSet,
  LengthMismatch,
  InvalidConfig,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code);

/// All recoverable failures in the toolkit are reported through this type;
/// `code()` identifies the contract that was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace imt
