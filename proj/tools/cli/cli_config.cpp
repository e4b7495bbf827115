#include "cli_config.hpp"

#include <fstream>
#include <sstream>

#include "ipgo/error.hpp"
#include "json.hpp"

namespace ipgo::cli {

namespace {

using Json = nlohmann::ordered_json;

[[noreturn]] void bad(const std::string& key, const std::string& what) {
  throw Error(ErrorCode::kInvalidArgument, "config key '" + key + "': " + what);
}

template <class T>
T get_as(const Json& v, const std::string& key) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) bad(key, "expected a boolean");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) bad(key, "expected a string");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) bad(key, "expected a number");
  } else if constexpr (std::is_signed_v<T>) {
    if (!v.is_number_integer()) bad(key, "expected an integer");
  } else {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
      if (!v.is_number_unsigned()) bad(key, "expected a non-negative integer");
    }
  }
  return v.get<T>();
}

template <class T>
void set(const Json& obj, const char* key, T& dst, const std::string& prefix = "") {
  if (auto it = obj.find(key); it != obj.end()) dst = get_as<T>(*it, prefix + key);
}

void check_keys(const Json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) bad(where, "expected an object");
  for (const auto& [key, _] : obj.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) bad(where.empty() ? key : where + "." + key, "unknown key");
  }
}

}  // namespace

std::string_view mode_name(Mode mode) { return mode == Mode::kIpgo ? "ipgo" : "ipgo-plus"; }

Mode parse_mode(std::string_view text) {
  if (text == "ipgo") return Mode::kIpgo;
  if (text == "ipgo-plus" || text == "ipgo+") return Mode::kIpgoPlus;
  throw Error(ErrorCode::kInvalidArgument, "unknown mode '" + std::string(text) + "', expected ipgo|ipgo-plus");
}

void apply_config_json(CliConfig& cfg, std::string_view json_text) {
  Json j = Json::parse(json_text.begin(), json_text.end(), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kInvalidArgument, "config is not valid JSON");
  check_keys(j,
             {"command", "mode", "epochs", "schedule", "gamma", "clip", "n_pre", "n_suff", "m_pre",
              "m_suff", "seed", "batch_size", "constraints", "oracle", "truncate_at", "prompts",
              "prompt_text", "synthetic", "out"},
             "");
  if (auto it = j.find("mode"); it != j.end()) cfg.mode = parse_mode(get_as<std::string>(*it, "mode"));
  set(j, "epochs", cfg.epochs);
  set(j, "gamma", cfg.gamma);
  set(j, "clip", cfg.clip_norm);
  set(j, "n_pre", cfg.n_pre);
  set(j, "n_suff", cfg.n_suff);
  set(j, "m_pre", cfg.m_pre);
  set(j, "m_suff", cfg.m_suff);
  set(j, "seed", cfg.seed);
  set(j, "batch_size", cfg.batch_size);
  set(j, "oracle", cfg.oracle);
  set(j, "truncate_at", cfg.truncate_at);
  set(j, "out", cfg.out);
  if (auto it = j.find("schedule"); it != j.end()) {
    const Json& s = *it;
    check_keys(s, {"kind", "lr0", "factor", "period", "hi", "lo"}, "schedule");
    if (auto k = s.find("kind"); k != s.end()) cfg.schedule = get_as<std::string>(*k, "schedule.kind");
    set(s, "lr0", cfg.step.lr0, "schedule.");
    set(s, "factor", cfg.step.factor, "schedule.");
    set(s, "period", cfg.step.period, "schedule.");
    set(s, "hi", cfg.cosine.hi, "schedule.");
    set(s, "lo", cfg.cosine.lo, "schedule.");
  }
  if (auto it = j.find("constraints"); it != j.end()) {
    check_keys(*it, {"range", "orthogonality"}, "constraints");
    set(*it, "range", cfg.constraints.range, "constraints.");
    set(*it, "orthogonality", cfg.constraints.orthogonality, "constraints.");
  }
  if (auto it = j.find("prompts"); it != j.end()) {
    if (!it->is_array()) bad("prompts", "expected an array of paths");
    cfg.prompts.clear();
    for (const auto& p : *it) cfg.prompts.push_back(get_as<std::string>(p, "prompts[]"));
  }
  if (auto it = j.find("prompt_text"); it != j.end() && !it->is_null()) {
    cfg.prompt_text = get_as<std::string>(*it, "prompt_text");
  }
  if (auto it = j.find("synthetic"); it != j.end() && !it->is_null()) {
    check_keys(*it, {"dim", "tokens", "seed", "count"}, "synthetic");
    set(*it, "dim", cfg.synthetic.dim, "synthetic.");
    set(*it, "tokens", cfg.synthetic.tokens, "synthetic.");
    set(*it, "seed", cfg.synthetic.seed, "synthetic.");
    set(*it, "count", cfg.synthetic.count, "synthetic.");
  }
}

void apply_config_file(CliConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    apply_config_json(cfg, ss.str());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

TrainConfig resolve(CliConfig& cfg, bool batch) {
  if (!cfg.mode) cfg.mode = batch ? Mode::kIpgoPlus : Mode::kIpgo;
  if (!cfg.schedule) cfg.schedule = batch ? "cosine" : "step";
  if (*cfg.schedule != "step" && *cfg.schedule != "cosine") {
    throw Error(ErrorCode::kInvalidArgument, "unknown schedule '" + *cfg.schedule + "', expected step|cosine");
  }
  if (cfg.truncate_at < 1) throw Error(ErrorCode::kInvalidArgument, "truncate_at must be >= 1");
  if (cfg.synthetic.count == 0) throw Error(ErrorCode::kInvalidArgument, "synthetic.count must be >= 1");
  if (!batch && cfg.prompts.size() > 1) {
    throw Error(ErrorCode::kInvalidArgument, "optimize takes one prompt; use optimize-batch for several");
  }
  if (!batch && cfg.synthetic.count != 1 && cfg.prompts.empty() && !cfg.prompt_text) {
    throw Error(ErrorCode::kInvalidArgument, "optimize takes one prompt; synthetic.count must be 1");
  }
  if (cfg.out.empty()) throw Error(ErrorCode::kInvalidArgument, "an output directory is required (--out)");

  TrainConfig t;
  t.mode = *cfg.mode;
  t.epochs = cfg.epochs;
  if (*cfg.schedule == "step") {
    t.schedule = cfg.step;
  } else {
    t.schedule = cfg.cosine;
  }
  t.gamma = cfg.gamma;
  t.clip_norm = cfg.clip_norm;
  t.n_pre = cfg.n_pre;
  t.n_suff = cfg.n_suff;
  t.m_pre = cfg.m_pre;
  t.m_suff = cfg.m_suff;
  t.seed = cfg.seed;
  t.batch_size = cfg.batch_size;
  t.constraints = cfg.constraints;
  validate_config(t);
  return t;
}

std::string config_to_json(const CliConfig& cfg, std::string_view command) {
  Json j;
  j["command"] = std::string(command);
  j["mode"] = cfg.mode ? Json(std::string(mode_name(*cfg.mode))) : Json(nullptr);
  j["epochs"] = cfg.epochs;
  Json s;
  s["kind"] = cfg.schedule ? Json(*cfg.schedule) : Json(nullptr);
  if (!cfg.schedule || *cfg.schedule == "step") {
    s["lr0"] = cfg.step.lr0;
    s["factor"] = cfg.step.factor;
    s["period"] = cfg.step.period;
  }
  if (!cfg.schedule || *cfg.schedule == "cosine") {
    s["hi"] = cfg.cosine.hi;
    s["lo"] = cfg.cosine.lo;
  }
  j["schedule"] = s;
  j["gamma"] = cfg.gamma;
  j["clip"] = cfg.clip_norm;
  j["n_pre"] = cfg.n_pre;
  j["n_suff"] = cfg.n_suff;
  j["m_pre"] = cfg.m_pre;
  j["m_suff"] = cfg.m_suff;
  j["seed"] = cfg.seed;
  j["batch_size"] = cfg.batch_size;
  j["constraints"] = {{"range", cfg.constraints.range}, {"orthogonality", cfg.constraints.orthogonality}};
  j["oracle"] = cfg.oracle;
  j["truncate_at"] = cfg.truncate_at;
  j["prompts"] = cfg.prompts;
  j["prompt_text"] = cfg.prompt_text ? Json(*cfg.prompt_text) : Json(nullptr);
  if (cfg.prompts.empty() && !cfg.prompt_text) {
    j["synthetic"] = {{"dim", cfg.synthetic.dim},
                      {"tokens", cfg.synthetic.tokens},
                      {"seed", cfg.synthetic.seed},
                      {"count", cfg.synthetic.count}};
  } else {
    j["synthetic"] = nullptr;
  }
  j["out"] = cfg.out;
  return j.dump(2) + "\n";
}

}  // namespace ipgo::cli
