#include "nmpose/error.hpp"

namespace nmpose {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kDegenerateView: return "degenerate-view";
    case ErrorCode::kResourceLimit: return "resource-limit";
    case ErrorCode::kInvalidRotation: return "invalid-rotation";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kOutOfBounds: return "out-of-bounds";
    case ErrorCode::kInternal: return "internal";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kMissingFile: return "missing-file";
    case ErrorCode::kMalformedManifest: return "malformed-manifest";
    case ErrorCode::kViewCount: return "view-count";
    case ErrorCode::kMaskCoverage: return "mask-coverage";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kMalformedReport: return "malformed-report";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

}  // namespace nmpose
