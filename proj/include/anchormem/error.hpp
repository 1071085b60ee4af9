#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace anchormem {

enum class ErrorCode {
  kEmptyPrompt,
  kBackendUnreachable,
  kBackendProtocol,
  kEmbeddingFailure,
  kMalformedEntry,
  kUnreadableFile,
  kStorageWriteFailure,
  kIdCollision,
  kInvalidArgument,
  kInvalidParams,
  kPartialSynthesis,
  kProbeSetVersionMismatch,
  kNotFound,
  kConflict,
  kNoBaseline,
  kForbidden,
  kConfig,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so the
/// service layer can map it onto an HTTP status and the CLI onto an exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// True for failures that originate in the model backend (mapped to 502 / exit 3).
bool is_backend_error(ErrorCode code);

}  // namespace anchormem
