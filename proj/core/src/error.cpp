#include "ipgo/error.hpp"

namespace ipgo {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kRankDeficient: return "rank_deficient";
    case ErrorCode::kConstraintViolation: return "constraint_violation";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kUndefined: return "undefined";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kBadMagic: return "bad_magic";
    case ErrorCode::kBadVersion: return "bad_version";
    case ErrorCode::kBadRole: return "bad_role";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kZeroColumns: return "zero_columns";
    case ErrorCode::kMalformed: return "malformed";
    case ErrorCode::kTransport: return "transport";
    case ErrorCode::kTimeout: return "timeout";
    case ErrorCode::kProtocol: return "protocol";
    case ErrorCode::kRemote: return "remote";
    case ErrorCode::kHandshake: return "handshake";
    case ErrorCode::kTrainingAborted: return "training_aborted";
    case ErrorCode::kFixtureMismatch: return "fixture_mismatch";
  }
  return "unknown";
}

}  // namespace ipgo
