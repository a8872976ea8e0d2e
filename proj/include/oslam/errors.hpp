#pragma once

#include <stdexcept>
#include <string>

namespace oslam {

enum class ErrorCode {
  kInvalidInput,
  kDimension,
  kDegenerateLandmark,
  kBehindCamera,
  kDegenerateProjection,
  kLinearization,
  kSchema,
  kParse,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidInput: return "invalid-input";
    case ErrorCode::kDimension: return "dimension";
    case ErrorCode::kDegenerateLandmark: return "degenerate-landmark";
    case ErrorCode::kBehindCamera: return "behind-camera";
    case ErrorCode::kDegenerateProjection: return "degenerate-projection";
    case ErrorCode::kLinearization: return "linearization";
    case ErrorCode::kSchema: return "schema";
    case ErrorCode::kParse: return "parse";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace oslam
