#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace g2p {

enum class ErrorCode {
  kInvalidInput,
  kInvalidTag,
  kFormat,
  kInsufficientData,
  kConfig,
  kIncompatible,
  kShape,
  kDegenerateBatch,
  kNonFinite,
  kInvalidReference,
  kUndefinedCorrelation,
  kCheckpoint,
  kIo,
};

std::string_view to_string(ErrorCode code);

// Process exit status for each failure family. 0 is success, 1 is reserved
// for command-line usage errors.
enum class ExitStatus : int {
  kOk = 0,
  kUsage = 1,
  kConfig = 2,
  kData = 3,
  kNumeric = 4,
  kStorage = 5,
};

ExitStatus exit_status_for(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace g2p
