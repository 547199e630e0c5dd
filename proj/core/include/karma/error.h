#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace karma {

enum class ErrorCode {
  kIo,
  kMalformed,
  kDuplicateId,
  kMissingMetadata,
  kTooSmall,
  kEmptyCorpus,
  kShapeMismatch,
  kNonScalarLoss,
  kNonFinite,
  kAbortTraining,
  kDegenerateLabels,
  kAucUndefined,
  kTooFewPairs,
  kDegenerate,
  kIncompatibleCheckpoint,
  kModeMismatch,
  kVocabMismatch,
  kOutOfVocabulary,
  kInvalidConfig,
};

std::string_view to_string(ErrorCode code);

// Numeric failures (non-finite values, aborted training) as opposed to bad
// input data or configuration.
bool is_numeric(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace karma
