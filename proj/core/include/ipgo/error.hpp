#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ipgo {

enum class ErrorCode {
  kDimensionMismatch,
  kRankDeficient,
  kConstraintViolation,
  kInvalidArgument,
  kNonFinite,
  kUndefined,
  kIo,
  kBadMagic,
  kBadVersion,
  kBadRole,
  kTruncated,
  kZeroColumns,
  kMalformed,
  kTransport,
  kTimeout,
  kProtocol,
  kRemote,
  kHandshake,
  kTrainingAborted,
  kFixtureMismatch,
};

std::string_view error_code_name(ErrorCode code);

// All library failures are reported with this exception; `code()` is stable
// and machine-readable, `what()` is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ipgo
