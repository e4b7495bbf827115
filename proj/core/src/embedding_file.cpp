#include "ipgo/embedding_file.hpp"

#include <unistd.h>

#include <atomic>
#include <bit>
#include <fstream>
#include <iterator>
#include <limits>

#include "ipgo/error.hpp"

namespace ipgo {

namespace {

constexpr std::uint8_t kMagic[4] = {'I', 'P', 'G', 'O'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[at + static_cast<std::size_t>(i)];
  return v;
}

std::size_t expected_records(EmbeddingRole role) {
  switch (role) {
    case EmbeddingRole::kPrompt: return 1;
    case EmbeddingRole::kInsertPair: return 2;
    case EmbeddingRole::kParams: return 5;
  }
  return 0;
}

bool known_role(std::uint16_t tag) { return tag >= 1 && tag <= 3; }

void validate_layout(const EmbeddingRecords& rec) {
  const std::size_t want = expected_records(rec.role);
  if (rec.mats.size() != want) {
    throw Error(ErrorCode::kMalformed, std::string(role_name(rec.role)) + " file needs " +
                                           std::to_string(want) + " record(s), found " +
                                           std::to_string(rec.mats.size()));
  }
  for (const Mat& m : rec.mats) {
    if (m.rows() == 0) throw Error(ErrorCode::kMalformed, "record with zero rows");
  }
  const auto& m = rec.mats;
  switch (rec.role) {
    case EmbeddingRole::kPrompt:
      if (m[0].cols() == 0) throw Error(ErrorCode::kZeroColumns, "prompt record has no columns");
      break;
    case EmbeddingRole::kInsertPair:
      if (m[0].rows() != m[1].rows()) {
        throw Error(ErrorCode::kMalformed, "insert pair records differ in dimension");
      }
      if (m[0].cols() + m[1].cols() == 0) {
        throw Error(ErrorCode::kZeroColumns, "insert pair has no columns");
      }
      break;
    case EmbeddingRole::kParams:
      if (m[0].rows() != m[1].rows() || m[2].rows() != m[0].cols() ||
          m[3].rows() != m[1].cols() || m[4].rows() != 4 || m[4].cols() != 1) {
        throw Error(ErrorCode::kMalformed, "params records have inconsistent shapes");
      }
      if (m[0].cols() == 0 || m[1].cols() == 0) {
        throw Error(ErrorCode::kZeroColumns, "params basis has no columns");
      }
      break;
  }
}

}  // namespace

std::string_view role_name(EmbeddingRole role) {
  switch (role) {
    case EmbeddingRole::kPrompt: return "prompt";
    case EmbeddingRole::kInsertPair: return "insert_pair";
    case EmbeddingRole::kParams: return "params";
  }
  return "unknown";
}

std::vector<std::uint8_t> matrix_payload_bytes(const Mat& mat) {
  std::vector<std::uint8_t> out;
  out.reserve(mat.size() * 8);
  for (std::size_t c = 0; c < mat.cols(); ++c) {
    for (std::size_t r = 0; r < mat.rows(); ++r) {
      const auto bits = std::bit_cast<std::uint64_t>(mat(r, c));
      for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
  }
  return out;
}

Mat matrix_from_payload(std::span<const std::uint8_t> bytes, std::size_t rows, std::size_t cols) {
  if (bytes.size() != rows * cols * 8) {
    throw Error(ErrorCode::kTruncated, "payload has " + std::to_string(bytes.size()) +
                                           " bytes, expected " + std::to_string(rows * cols * 8));
  }
  Mat mat(rows, cols);
  std::size_t at = 0;
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t r = 0; r < rows; ++r) {
      std::uint64_t bits = 0;
      for (int i = 7; i >= 0; --i) bits = (bits << 8) | bytes[at + static_cast<std::size_t>(i)];
      mat(r, c) = std::bit_cast<double>(bits);
      at += 8;
    }
  }
  return mat;
}

std::vector<std::uint8_t> encode_records(const EmbeddingRecords& records) {
  validate_layout(records);
  std::vector<std::uint8_t> out;
  for (const Mat& m : records.mats) {
    if (m.rows() > std::numeric_limits<std::uint32_t>::max() ||
        m.cols() > std::numeric_limits<std::uint32_t>::max()) {
      throw Error(ErrorCode::kInvalidArgument, "matrix too large for the file format");
    }
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    put_u16(out, kEmbeddingFormatVersion);
    put_u16(out, static_cast<std::uint16_t>(records.role));
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    const auto payload = matrix_payload_bytes(m);
    out.insert(out.end(), payload.begin(), payload.end());
  }
  return out;
}

EmbeddingRecords decode_records(std::span<const std::uint8_t> bytes) {
  EmbeddingRecords rec;
  std::size_t at = 0;
  bool first = true;
  if (bytes.empty()) throw Error(ErrorCode::kTruncated, "empty embedding file");
  while (at < bytes.size()) {
    if (bytes.size() - at < kEmbeddingHeaderBytes) {
      throw Error(ErrorCode::kTruncated, "embedding file truncated inside a record header");
    }
    if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin() + static_cast<long>(at))) {
      throw Error(ErrorCode::kBadMagic, "not an IPGO embedding file (bad magic)");
    }
    const std::uint16_t version = get_u16(bytes, at + 4);
    if (version != kEmbeddingFormatVersion) {
      throw Error(ErrorCode::kBadVersion, "unsupported embedding format version " +
                                              std::to_string(version));
    }
    const std::uint16_t tag = get_u16(bytes, at + 6);
    if (!known_role(tag)) {
      throw Error(ErrorCode::kBadRole, "unknown role tag " + std::to_string(tag));
    }
    const auto role = static_cast<EmbeddingRole>(tag);
    if (first) {
      rec.role = role;
      first = false;
    } else if (role != rec.role) {
      throw Error(ErrorCode::kBadRole, "records in one file carry different role tags");
    }
    const std::size_t rows = get_u32(bytes, at + 8);
    const std::size_t cols = get_u32(bytes, at + 12);
    at += kEmbeddingHeaderBytes;
    const std::size_t remaining = bytes.size() - at;
    if (cols != 0 && rows > remaining / 8 / cols) {
      throw Error(ErrorCode::kTruncated, "embedding file truncated inside a payload");
    }
    const std::size_t payload = rows * cols * 8;
    if (remaining < payload) {
      throw Error(ErrorCode::kTruncated, "embedding file truncated inside a payload");
    }
    rec.mats.push_back(matrix_from_payload(bytes.subspan(at, payload), rows, cols));
    at += payload;
    if (rec.mats.size() > expected_records(rec.role)) {
      throw Error(ErrorCode::kMalformed, "trailing records after a complete " +
                                             std::string(role_name(rec.role)) + " file");
    }
  }
  validate_layout(rec);
  return rec;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  static std::atomic<unsigned> counter{0};
  std::filesystem::path tmp = path;
  tmp += ".tmp-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorCode::kIo, "cannot open " + tmp.string() + " for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    os.flush();
    if (!os) {
      std::error_code ignored;
      std::filesystem::remove(tmp, ignored);
      throw Error(ErrorCode::kIo, "short write to " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::kIo, "cannot move " + tmp.string() + " to " + path.string());
  }
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span<const std::uint8_t>(
                              reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(is),
                                   std::istreambuf_iterator<char>());
}

void write_records(const std::filesystem::path& path, const EmbeddingRecords& records) {
  write_file_atomic(path, encode_records(records));
}

EmbeddingRecords read_records(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_records(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void write_embedding(const std::filesystem::path& path, const Mat& mat, EmbeddingRole role) {
  if (expected_records(role) != 1) {
    throw Error(ErrorCode::kBadRole, std::string(role_name(role)) +
                                         " files hold several matrices; use the typed writer");
  }
  write_records(path, {role, {mat}});
}

EmbeddingMatrix read_embedding(const std::filesystem::path& path) {
  EmbeddingRecords rec = read_records(path);
  if (rec.mats.size() != 1) {
    throw Error(ErrorCode::kBadRole, path.string() + ": expected a single-matrix file, found " +
                                         std::string(role_name(rec.role)));
  }
  return {std::move(rec.mats.front()), rec.role};
}

void write_insert_pair(const std::filesystem::path& path, const InsertPair& pair) {
  write_records(path, {EmbeddingRole::kInsertPair, {pair.prefix, pair.suffix}});
}

InsertPair read_insert_pair(const std::filesystem::path& path) {
  EmbeddingRecords rec = read_records(path);
  if (rec.role != EmbeddingRole::kInsertPair) {
    throw Error(ErrorCode::kBadRole, path.string() + ": expected insert_pair, found " +
                                         std::string(role_name(rec.role)));
  }
  return {std::move(rec.mats[0]), std::move(rec.mats[1])};
}

void write_params(const std::filesystem::path& path, const InsertionParams& params) {
  const Mat angles = Mat::from_rows({{params.prefix.theta1},
                                     {params.prefix.theta2},
                                     {params.suffix.theta1},
                                     {params.suffix.theta2}});
  write_records(path, {EmbeddingRole::kParams,
                       {params.prefix.basis, params.suffix.basis, params.prefix.coeffs.transpose(),
                        params.suffix.coeffs.transpose(), angles}});
}

InsertionParams read_params(const std::filesystem::path& path) {
  EmbeddingRecords rec = read_records(path);
  if (rec.role != EmbeddingRole::kParams) {
    throw Error(ErrorCode::kBadRole, path.string() + ": expected params, found " +
                                         std::string(role_name(rec.role)));
  }
  InsertionParams params;
  params.prefix.basis = std::move(rec.mats[0]);
  params.suffix.basis = std::move(rec.mats[1]);
  params.prefix.coeffs = rec.mats[2].transpose();
  params.suffix.coeffs = rec.mats[3].transpose();
  params.prefix.theta1 = rec.mats[4](0, 0);
  params.prefix.theta2 = rec.mats[4](1, 0);
  params.suffix.theta1 = rec.mats[4](2, 0);
  params.suffix.theta2 = rec.mats[4](3, 0);
  return params;
}

}  // namespace ipgo
