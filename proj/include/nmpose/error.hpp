#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nmpose {

enum class ErrorCode {
  kInvalidArgument,
  kDegenerateView,
  kResourceLimit,
  kInvalidRotation,
  kShape,
  kOutOfBounds,
  kInternal,
  kIo,
  kMissingFile,
  kMalformedManifest,
  kViewCount,
  kMaskCoverage,
  kConfig,
  kMalformedReport,
};

std::string_view to_string(ErrorCode code);

// All library failures are reported as nmpose::Error; callers that need to
// distinguish causes switch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace nmpose
