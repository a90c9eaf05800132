#pragma once

#include <stdexcept>
#include <string>

namespace densetrack {

enum class ErrorCode {
  kInvalidArgument = 1,
  kIo = 2,
  kNumeric = 3,
  kConfig = 4,
  kState = 5,
  kGeometry = 6,
};

// Single exception type used throughout the core; the C API maps the code
// onto its status enum.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, const std::string& what, ErrorCode code = ErrorCode::kInvalidArgument) {
  if (!cond) throw Error(code, what);
}

}  // namespace densetrack
