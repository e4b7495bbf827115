#include "ipgo/wire.hpp"

#include "ipgo/base64.hpp"
#include "ipgo/embedding_file.hpp"
#include "ipgo/error.hpp"
#include "json.hpp"

namespace ipgo::wire {

namespace {

using Json = nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& msg) { throw Error(ErrorCode::kProtocol, msg); }

Json parse_object(std::string_view line) {
  Json j = Json::parse(line.begin(), line.end(), nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) fail("malformed JSON line");
  if (!j.is_object()) fail("protocol line is not a JSON object");
  return j;
}

const Json& field(const Json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) fail(std::string("missing field '") + name + "'");
  return *it;
}

std::uint64_t get_u64(const Json& j, const char* name) {
  const Json& v = field(j, name);
  if (!v.is_number_unsigned()) {
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::uint64_t>();
    fail(std::string("field '") + name + "' must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

double get_f64(const Json& j, const char* name) {
  const Json& v = field(j, name);
  if (!v.is_number()) fail(std::string("field '") + name + "' must be a number");
  return v.get<double>();
}

std::string get_str(const Json& j, const char* name) {
  const Json& v = field(j, name);
  if (!v.is_string()) fail(std::string("field '") + name + "' must be a string");
  return v.get<std::string>();
}

Json matrix_json(const Mat& m) {
  Json j;
  j["d"] = m.rows();
  j["cols"] = m.cols();
  j["data"] = encode_matrix_data(m);
  return j;
}

Mat matrix_from_json(const Json& j) {
  if (!j.is_object()) fail("matrix field must be an object");
  return decode_matrix_data(get_str(j, "data"), get_u64(j, "d"), get_u64(j, "cols"));
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::kHello: return "hello";
    case Op::kEncode: return "encode";
    case Op::kEvaluate: return "evaluate";
  }
  return "unknown";
}

std::uint64_t request_id(const Request& req) {
  return std::visit([](const auto& r) { return r.id; }, req);
}

Op request_op(const Request& req) {
  switch (req.index()) {
    case 0: return Op::kHello;
    case 1: return Op::kEncode;
    default: return Op::kEvaluate;
  }
}

std::string encode_matrix_data(const Mat& mat) { return base64_encode(matrix_payload_bytes(mat)); }

Mat decode_matrix_data(std::string_view base64, std::size_t rows, std::size_t cols) {
  const auto bytes = base64_decode(base64);
  if (bytes.size() != rows * cols * 8) {
    fail("matrix payload has " + std::to_string(bytes.size()) + " bytes for declared shape " +
         std::to_string(rows) + "x" + std::to_string(cols));
  }
  return matrix_from_payload(bytes, rows, cols);
}

std::string to_line(const Request& req) {
  Json j;
  j["id"] = request_id(req);
  j["op"] = std::string(op_name(request_op(req)));
  if (const auto* hello = std::get_if<HelloRequest>(&req)) {
    j["version"] = hello->version;
    j["d"] = hello->dim;
  } else if (const auto* enc = std::get_if<EncodeRequest>(&req)) {
    j["text"] = enc->text;
  } else {
    const auto& ev = std::get<EvaluateRequest>(req);
    j["d"] = ev.emb.rows();
    j["cols"] = ev.emb.cols();
    j["data"] = encode_matrix_data(ev.emb);
    j["prompt_id"] = ev.prompt_id;
    j["n_pre"] = ev.n_pre;
    j["n_suff"] = ev.n_suff;
    j["truncate_at"] = ev.truncate_at;
  }
  return j.dump();
}

std::string to_line(const Response& resp) {
  Json j;
  if (const auto* err = std::get_if<ErrorResponse>(&resp)) {
    j["id"] = err->id ? Json(*err->id) : Json(nullptr);
    j["ok"] = false;
    j["error"] = err->message;
    return j.dump();
  }
  if (const auto* hello = std::get_if<HelloResponse>(&resp)) {
    j["id"] = hello->id;
    j["ok"] = true;
    j["version"] = hello->version;
    j["d"] = hello->dim;
    j["max_tokens"] = hello->max_tokens ? Json(*hello->max_tokens) : Json(nullptr);
    j["name"] = hello->name;
  } else if (const auto* enc = std::get_if<EncodeResponse>(&resp)) {
    j["id"] = enc->id;
    j["ok"] = true;
    j["prompt_id"] = enc->prompt_id;
    j["emb"] = matrix_json(enc->emb);
  } else {
    const auto& ev = std::get<EvaluateResponse>(resp);
    j["id"] = ev.id;
    j["ok"] = true;
    j["reward"] = ev.reward;
    j["grad"] = matrix_json(ev.grad);
    if (!ev.aux.empty()) j["aux"] = ev.aux;
  }
  return j.dump();
}

Request parse_request(std::string_view line) {
  const Json j = parse_object(line);
  const std::uint64_t id = get_u64(j, "id");
  const std::string op = get_str(j, "op");
  if (op == "hello") {
    HelloRequest r;
    r.id = id;
    r.version = static_cast<int>(get_u64(j, "version"));
    if (j.contains("d") && !j["d"].is_null()) r.dim = get_u64(j, "d");
    return r;
  }
  if (op == "encode") {
    return EncodeRequest{id, get_str(j, "text")};
  }
  if (op == "evaluate") {
    EvaluateRequest r;
    r.id = id;
    r.emb = decode_matrix_data(get_str(j, "data"), get_u64(j, "d"), get_u64(j, "cols"));
    r.prompt_id = get_str(j, "prompt_id");
    r.n_pre = get_u64(j, "n_pre");
    r.n_suff = get_u64(j, "n_suff");
    r.truncate_at = static_cast<int>(get_u64(j, "truncate_at"));
    if (r.n_pre + r.n_suff >= r.emb.cols()) {
      fail("n_pre + n_suff leaves no prompt columns");
    }
    return r;
  }
  fail("unknown op '" + op + "'");
}

Response parse_response(std::string_view line, Op answered) {
  const Json j = parse_object(line);
  const Json& ok = field(j, "ok");
  if (!ok.is_boolean()) fail("field 'ok' must be a boolean");
  if (!ok.get<bool>()) {
    ErrorResponse err;
    const Json& id = field(j, "id");
    if (!id.is_null()) err.id = get_u64(j, "id");
    err.message = j.contains("error") && j["error"].is_string() ? j["error"].get<std::string>()
                                                                 : std::string("unspecified error");
    return err;
  }
  const std::uint64_t id = get_u64(j, "id");
  switch (answered) {
    case Op::kHello: {
      HelloResponse r;
      r.id = id;
      r.version = static_cast<int>(get_u64(j, "version"));
      r.dim = get_u64(j, "d");
      if (j.contains("max_tokens") && !j["max_tokens"].is_null()) {
        r.max_tokens = get_u64(j, "max_tokens");
      }
      if (j.contains("name") && j["name"].is_string()) r.name = j["name"].get<std::string>();
      return r;
    }
    case Op::kEncode: {
      EncodeResponse r;
      r.id = id;
      r.emb = matrix_from_json(field(j, "emb"));
      r.prompt_id = get_str(j, "prompt_id");
      return r;
    }
    case Op::kEvaluate: {
      EvaluateResponse r;
      r.id = id;
      r.reward = get_f64(j, "reward");
      r.grad = matrix_from_json(field(j, "grad"));
      if (j.contains("aux") && j["aux"].is_object()) {
        for (const auto& [key, value] : j["aux"].items()) {
          if (value.is_number()) r.aux[key] = value.get<double>();
        }
      }
      return r;
    }
  }
  fail("unknown op");
}

std::optional<std::uint64_t> peek_id(std::string_view line) {
  Json j = Json::parse(line.begin(), line.end(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  auto it = j.find("id");
  if (it == j.end() || !it->is_number_integer() || it->get<std::int64_t>() < 0) return std::nullopt;
  return it->get<std::uint64_t>();
}

}  // namespace ipgo::wire
