#pragma once

#include <stdexcept>
#include <string>

namespace m3net {

// Numeric values mirror the m3_status codes of the C API.
enum class ErrorCode : int {
  kInvalidArgument = 1,
  kIo = 2,
  kBadMagic = 3,
  kUnsupportedVersion = 4,
  kTruncatedRecord = 5,
  kShapeMismatch = 6,
  kInsufficientClasses = 7,
  kInsufficientClipsPerClass = 8,
  kTooFewDistinctOrderings = 9,
  kUnknownClass = 10,
  kBadGrid = 11,
  kZeroNormFrame = 12,
  kEpisodeSizeMismatch = 13,
  kLabelOutOfRange = 14,
  kNonPositiveTemperature = 15,
  kConfig = 16,
  kCheckFailed = 17,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace m3net
