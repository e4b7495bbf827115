#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ipgo/optimizer.hpp"

namespace ipgo::cli {

struct SyntheticSpec {
  std::size_t dim = 768;
  std::size_t tokens = 8;
  std::uint64_t seed = 0;
  std::size_t count = 1;  // prompts seeded seed, seed + 1, ...
};

// Everything a training command needs. Unset optionals take command
// dependent defaults in resolve(): prompt-wise runs default to ipgo with
// step decay, batch runs to ipgo-plus with the cosine schedule.
struct CliConfig {
  std::optional<Mode> mode;
  std::size_t epochs = 50;
  std::optional<std::string> schedule;  // "step" | "cosine"
  StepDecay step;
  CosineSchedule cosine;
  double gamma = 1e-3;
  double clip_norm = 1.0;
  std::size_t n_pre = 10;
  std::size_t n_suff = 10;
  std::size_t m_pre = 300;
  std::size_t m_suff = 300;
  std::uint64_t seed = 0;
  std::size_t batch_size = 4;
  ConstraintToggles constraints;

  std::string oracle = "quadratic";
  int truncate_at = 1;
  std::vector<std::string> prompts;  // embedding files
  std::optional<std::string> prompt_text;
  SyntheticSpec synthetic;
  std::string out;
};

// Overlays the keys present in a JSON config object. Unknown keys and wrong
// types are errors.
void apply_config_json(CliConfig& cfg, std::string_view json_text);
void apply_config_file(CliConfig& cfg, const std::filesystem::path& path);

// Fills command dependent defaults and validates everything.
TrainConfig resolve(CliConfig& cfg, bool batch);

// Effective configuration as pretty JSON (what gets echoed to the run dir).
std::string config_to_json(const CliConfig& cfg, std::string_view command);

std::string_view mode_name(Mode mode);
Mode parse_mode(std::string_view text);

}  // namespace ipgo::cli
