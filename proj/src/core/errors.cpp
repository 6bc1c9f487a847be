#include "m3net/errors.hpp"

namespace m3net {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIo: return "IoError";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kUnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::kTruncatedRecord: return "TruncatedRecord";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kInsufficientClasses: return "InsufficientClasses";
    case ErrorCode::kInsufficientClipsPerClass: return "InsufficientClipsPerClass";
    case ErrorCode::kTooFewDistinctOrderings: return "TooFewDistinctOrderings";
    case ErrorCode::kUnknownClass: return "UnknownClass";
    case ErrorCode::kBadGrid: return "BadGrid";
    case ErrorCode::kZeroNormFrame: return "ZeroNormFrame";
    case ErrorCode::kEpisodeSizeMismatch: return "EpisodeSizeMismatch";
    case ErrorCode::kLabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::kNonPositiveTemperature: return "NonPositiveTemperature";
    case ErrorCode::kConfig: return "ConfigError";
    case ErrorCode::kCheckFailed: return "CheckFailed";
  }
  return "Unknown";
}

}  // namespace m3net
