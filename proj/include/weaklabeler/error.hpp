#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace weaklabeler {

enum class ErrorCode {
  Io,
  Parse,
  InvalidArgument,
  DuplicateId,
  DuplicateCategory,
  EmptyDefinition,
  DimensionMismatch,
  ZeroNorm,
  LengthMismatch,
  NonFinite,
  CountMismatch,
  ProviderMismatch,
  MissingProvider,
  TooFewDocuments,
  Unidentifiable,
  InconsistentCoverage,
  UnknownCategory,
  EmptyVocabulary,
  MissingOutput,
  JobFailed,
};

std::string_view to_string(ErrorCode code);

/// Every failure in the library surfaces as this exception; `code()` is what
/// callers and tests branch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace weaklabeler
