#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ipgo/linalg.hpp"
#include "ipgo/optimizer.hpp"
#include "ipgo/parameterization.hpp"

namespace ipgo {

// Binary matrix container, version 1. A file is a sequence of records; every
// record is a 16-byte header followed by its payload (all little-endian):
//
//   offset  size  field
//        0     4  magic "IPGO"
//        4     2  format version (u16) = 1
//        6     2  role tag (u16): 1 prompt, 2 insert_pair, 3 params
//        8     4  rows (u32), >= 1
//       12     4  cols (u32)
//       16  8*r*c payload, IEEE-754 binary64, column-major
//
// The role fixes the record count and meaning:
//   prompt      1 record:  T(p), d x K with K >= 1
//   insert_pair 2 records: V_pre d x N_pre, V_suff d x N_suff (N_pre + N_suff >= 1)
//   params      5 records: E_pre d x m_pre, E_suff d x m_suff,
//                          Z_pre^T m_pre x N_pre, Z_suff^T m_suff x N_suff,
//                          angles 4 x 1 (theta1_pre, theta2_pre, theta1_suff, theta2_suff)
enum class EmbeddingRole : std::uint16_t { kPrompt = 1, kInsertPair = 2, kParams = 3 };

inline constexpr std::uint16_t kEmbeddingFormatVersion = 1;
inline constexpr std::size_t kEmbeddingHeaderBytes = 16;

std::string_view role_name(EmbeddingRole role);

struct EmbeddingRecords {
  EmbeddingRole role = EmbeddingRole::kPrompt;
  std::vector<Mat> mats;
};

// In-memory encode/decode; decode validates magic, version, role, record
// count, lengths and the per-role shape rules, each with its own ErrorCode.
std::vector<std::uint8_t> encode_records(const EmbeddingRecords& records);
EmbeddingRecords decode_records(std::span<const std::uint8_t> bytes);

// Whole-file IO. Writes go to a temporary sibling and are renamed into place.
void write_records(const std::filesystem::path& path, const EmbeddingRecords& records);
EmbeddingRecords read_records(const std::filesystem::path& path);

// Single-matrix convenience: only valid for the one-record prompt role.
void write_embedding(const std::filesystem::path& path, const Mat& mat,
                     EmbeddingRole role = EmbeddingRole::kPrompt);
struct EmbeddingMatrix {
  Mat mat;
  EmbeddingRole role = EmbeddingRole::kPrompt;
};
EmbeddingMatrix read_embedding(const std::filesystem::path& path);

void write_insert_pair(const std::filesystem::path& path, const InsertPair& pair);
InsertPair read_insert_pair(const std::filesystem::path& path);

void write_params(const std::filesystem::path& path, const InsertionParams& params);
InsertionParams read_params(const std::filesystem::path& path);

// Writes `bytes` to `path` through a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

// Raw little-endian binary64 column-major bytes of a matrix (the payload
// layout shared by the file format and the wire protocol).
std::vector<std::uint8_t> matrix_payload_bytes(const Mat& mat);
Mat matrix_from_payload(std::span<const std::uint8_t> bytes, std::size_t rows, std::size_t cols);

}  // namespace ipgo
