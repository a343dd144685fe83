#include "stein_cv/error.hpp"

namespace steincv {

const char* ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kDimension: return "dimension mismatch";
    case ErrorCode::kUnsupported: return "unsupported operation";
    case ErrorCode::kNumeric: return "numerical failure";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kConfig: return "config error";
    case ErrorCode::kIo: return "i/o error";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
      code_(code) {}

void Throw(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace steincv
