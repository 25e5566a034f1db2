#include "finta/error.hpp"

namespace finta {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidStreamline: return "invalid-streamline";
    case ErrorCode::kShapeMismatch: return "shape-mismatch";
    case ErrorCode::kInvalidConfig: return "invalid-config";
    case ErrorCode::kStratificationImpossible: return "stratification-impossible";
    case ErrorCode::kInvalidLatent: return "invalid-latent";
    case ErrorCode::kEmptyBatch: return "empty-batch";
    case ErrorCode::kTrainingDiverged: return "training-diverged";
    case ErrorCode::kEmptyReference: return "empty-reference";
    case ErrorCode::kDegenerateROC: return "degenerate-roc";
    case ErrorCode::kDegenerateGroups: return "degenerate-groups";
    case ErrorCode::kCorruptFile: return "corrupt-file";
    case ErrorCode::kUnsupportedVersion: return "unsupported-version";
    case ErrorCode::kIoError: return "io-error";
    case ErrorCode::kFileNotFound: return "file-not-found";
  }
  return "unknown";
}

}  // namespace finta
