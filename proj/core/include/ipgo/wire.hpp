#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include "ipgo/linalg.hpp"

namespace ipgo::wire {

// Newline-delimited JSON, one object per line, version 1. Matrices travel as
// {"d": rows, "cols": cols, "data": base64(little-endian binary64,
// column-major)} so values survive the trip bit-exactly. See
// docs/protocol.md for the full message catalogue.
inline constexpr int kProtocolVersion = 1;

enum class Op { kHello, kEncode, kEvaluate };
std::string_view op_name(Op op);

struct HelloRequest {
  std::uint64_t id = 0;
  int version = kProtocolVersion;
  // Embedding dimension the client will send; 0 when unknown.
  std::size_t dim = 0;
};

struct EncodeRequest {
  std::uint64_t id = 0;
  std::string text;
};

struct EvaluateRequest {
  std::uint64_t id = 0;
  Mat emb;  // d x (n_pre + K + n_suff)
  std::string prompt_id;
  std::size_t n_pre = 0;
  std::size_t n_suff = 0;
  // Sampling steps from the end at which the oracle stops backpropagating.
  int truncate_at = 1;
};

using Request = std::variant<HelloRequest, EncodeRequest, EvaluateRequest>;

struct HelloResponse {
  std::uint64_t id = 0;
  int version = kProtocolVersion;
  std::size_t dim = 0;
  std::optional<std::size_t> max_tokens;
  std::string name;
};

struct EncodeResponse {
  std::uint64_t id = 0;
  Mat emb;  // d x K
  std::string prompt_id;
};

struct EvaluateResponse {
  std::uint64_t id = 0;
  double reward = 0.0;
  Mat grad;
  std::map<std::string, double> aux;
};

struct ErrorResponse {
  std::optional<std::uint64_t> id;  // absent when the request id was unreadable
  std::string message;
};

using Response = std::variant<HelloResponse, EncodeResponse, EvaluateResponse, ErrorResponse>;

std::uint64_t request_id(const Request& req);
Op request_op(const Request& req);

// Serialized without the trailing newline.
std::string to_line(const Request& req);
std::string to_line(const Response& resp);

// Throw kProtocol on malformed JSON, missing fields or bad payloads.
Request parse_request(std::string_view line);
// The response format depends on the op it answers.
Response parse_response(std::string_view line, Op answered);

// Best-effort id extraction from a line that failed to parse.
std::optional<std::uint64_t> peek_id(std::string_view line);

std::string encode_matrix_data(const Mat& mat);
Mat decode_matrix_data(std::string_view base64, std::size_t rows, std::size_t cols);

}  // namespace ipgo::wire
