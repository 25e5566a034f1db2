#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace finta {

enum class ErrorCode {
  kInvalidStreamline,
  kShapeMismatch,
  kInvalidConfig,
  kStratificationImpossible,
  kInvalidLatent,
  kEmptyBatch,
  kTrainingDiverged,
  kEmptyReference,
  kDegenerateROC,
  kDegenerateGroups,
  kCorruptFile,
  kUnsupportedVersion,
  kIoError,
  kFileNotFound,
};

/// Stable, machine-parsable name (kebab-case) for an error code.
std::string_view error_code_name(ErrorCode code);

/// Base exception for every recoverable failure in the library. The code is
/// what callers switch on; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

/// Raised by parsers. Carries the byte offset where the problem was detected.
class CorruptFileError : public Error {
 public:
  CorruptFileError(const std::string& message, std::optional<std::size_t> offset = std::nullopt)
      : Error(ErrorCode::kCorruptFile,
              offset ? message + " (at byte " + std::to_string(*offset) + ")" : message),
        offset_(offset) {}

  std::optional<std::size_t> offset() const { return offset_; }

 private:
  std::optional<std::size_t> offset_;
};

class TrainingDivergedError : public Error {
 public:
  TrainingDivergedError(int epoch, const std::string& message)
      : Error(ErrorCode::kTrainingDiverged, message), epoch_(epoch) {}

  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

}  // namespace finta
