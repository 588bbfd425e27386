#include "g2p/error.hpp"

namespace g2p {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidInput: return "invalid input";
    case ErrorCode::kInvalidTag: return "invalid tag";
    case ErrorCode::kFormat: return "format error";
    case ErrorCode::kInsufficientData: return "insufficient data";
    case ErrorCode::kConfig: return "config error";
    case ErrorCode::kIncompatible: return "incompatible";
    case ErrorCode::kShape: return "shape error";
    case ErrorCode::kDegenerateBatch: return "degenerate batch";
    case ErrorCode::kNonFinite: return "non-finite value";
    case ErrorCode::kInvalidReference: return "invalid reference";
    case ErrorCode::kUndefinedCorrelation: return "undefined correlation";
    case ErrorCode::kCheckpoint: return "checkpoint error";
    case ErrorCode::kIo: return "io error";
  }
  return "unknown error";
}

ExitStatus exit_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig:
    case ErrorCode::kIncompatible:
    case ErrorCode::kInvalidTag:
      return ExitStatus::kConfig;
    case ErrorCode::kInvalidInput:
    case ErrorCode::kFormat:
    case ErrorCode::kInsufficientData:
    case ErrorCode::kShape:
    case ErrorCode::kDegenerateBatch:
    case ErrorCode::kInvalidReference:
      return ExitStatus::kData;
    case ErrorCode::kNonFinite:
    case ErrorCode::kUndefinedCorrelation:
      return ExitStatus::kNumeric;
    case ErrorCode::kCheckpoint:
    case ErrorCode::kIo:
      return ExitStatus::kStorage;
  }
  return ExitStatus::kData;
}

}  // namespace g2p
