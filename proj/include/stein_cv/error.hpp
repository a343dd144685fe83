#ifndef STEIN_CV_ERROR_HPP_
#define STEIN_CV_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace steincv {

enum class ErrorCode {
  kInvalidArgument,
  kDimension,
  kUnsupported,
  kNumeric,
  kDivergence,
  kConfig,
  kIo,
};

const char* ErrorCodeName(ErrorCode code);

// Every failure raised by the library carries a code so the C boundary can
// map it onto a status value without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void Throw(ErrorCode code, const std::string& message);

inline void Require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) Throw(code, message);
}

}  // namespace steincv

#endif  // STEIN_CV_ERROR_HPP_
