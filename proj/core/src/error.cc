#include "karma/error.h"

namespace karma {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo: return "io";
    case ErrorCode::kMalformed: return "malformed";
    case ErrorCode::kDuplicateId: return "duplicate_id";
    case ErrorCode::kMissingMetadata: return "missing_metadata";
    case ErrorCode::kTooSmall: return "too_small";
    case ErrorCode::kEmptyCorpus: return "empty_corpus";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kNonScalarLoss: return "non_scalar_loss";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kAbortTraining: return "abort_training";
    case ErrorCode::kDegenerateLabels: return "degenerate_labels";
    case ErrorCode::kAucUndefined: return "auc_undefined";
    case ErrorCode::kTooFewPairs: return "too_few_pairs";
    case ErrorCode::kDegenerate: return "degenerate";
    case ErrorCode::kIncompatibleCheckpoint: return "incompatible_checkpoint";
    case ErrorCode::kModeMismatch: return "mode_mismatch";
    case ErrorCode::kVocabMismatch: return "vocab_mismatch";
    case ErrorCode::kOutOfVocabulary: return "out_of_vocabulary";
    case ErrorCode::kInvalidConfig: return "invalid_config";
  }
  return "unknown";
}

bool is_numeric(ErrorCode code) {
  return code == ErrorCode::kNonFinite || code == ErrorCode::kAbortTraining;
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code) {}

}  // namespace karma
