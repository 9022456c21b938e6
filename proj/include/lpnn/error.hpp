#ifndef LPNN_ERROR_HPP_
#define LPNN_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace lpnn {

// Error categories map 1:1 onto the CLI's machine-parsable failure lines.
enum class ErrorCategory { usage, config, io, format, shape, numeric };

inline const char* to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::usage: return "usage";
    case ErrorCategory::config: return "config";
    case ErrorCategory::io: return "io";
    case ErrorCategory::format: return "format";
    case ErrorCategory::shape: return "shape";
    case ErrorCategory::numeric: return "numeric";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}
  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory c, const std::string& msg) {
  throw Error(c, msg);
}

inline void require(bool cond, ErrorCategory c, const std::string& msg) {
  if (!cond) fail(c, msg);
}

}  // namespace lpnn

#endif  // LPNN_ERROR_HPP_
