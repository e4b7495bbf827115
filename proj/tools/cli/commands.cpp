#include "commands.hpp"

#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "cli_config.hpp"
#include "fixtures.hpp"
#include "ipgo/embedding_file.hpp"
#include "ipgo/error.hpp"
#include "ipgo/gradcheck.hpp"
#include "ipgo/optimizer.hpp"
#include "ipgo/oracle_server.hpp"
#include "ipgo/remote_oracle.hpp"
#include "ipgo/rng.hpp"
#include "ipgo/rotation_demo.hpp"
#include "json.hpp"
#include "oracle_spec.hpp"

namespace ipgo::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

std::string error_record(std::string_view code, std::string_view message, std::string_view command) {
  Json j;
  j["error"]["code"] = std::string(code);
  j["error"]["message"] = std::string(message);
  j["error"]["command"] = std::string(command);
  return j.dump();
}

namespace {

constexpr double kGradTolerance = 1e-5;

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// Flag values land in holders and are copied into the target only when the
// flag was actually given, so they override the config file but not the
// other way around.
class Overrides {
 public:
  template <class T>
  CLI::Option* add(CLI::App* app, const std::string& name, T& target, const std::string& desc) {
    auto holder = std::make_shared<T>(target);
    CLI::Option* opt = app->add_option(name, *holder, desc);
    apply_.push_back([opt, holder, &target] {
      if (opt->count() > 0) target = *holder;
    });
    return opt;
  }

  CLI::Option* add_flag(CLI::App* app, const std::string& name, std::function<void()> on_set,
                        const std::string& desc) {
    CLI::Option* opt = app->add_flag(name, desc);
    apply_.push_back([opt, fn = std::move(on_set)] {
      if (opt->count() > 0) fn();
    });
    return opt;
  }

  void apply() const {
    for (const auto& fn : apply_) fn();
  }

 private:
  std::vector<std::function<void()>> apply_;
};

struct TrainFlags {
  std::string config_path;
  std::string mode_text;
  std::string schedule_text;
  std::vector<std::string> prompt_paths;
  std::string prompt_text;
  Overrides overrides;
  CLI::Option* mode_opt = nullptr;
  CLI::Option* schedule_opt = nullptr;
  CLI::Option* prompts_opt = nullptr;
  CLI::Option* prompt_text_opt = nullptr;
};

void add_train_flags(CLI::App* app, CliConfig& cfg, TrainFlags& f) {
  app->add_option("--config", f.config_path, "JSON config file; flags override its values");
  f.mode_opt = app->add_option("--mode", f.mode_text, "ipgo | ipgo-plus");
  auto& o = f.overrides;
  o.add(app, "--oracle", cfg.oracle, "quadratic[:SEED] | cosine[:SEED] | linear[:SEED] | net[:SEED[:WIDTH]] | null | remote:ENDPOINT");
  o.add(app, "--epochs", cfg.epochs, "Training epochs");
  o.add(app, "--seed", cfg.seed, "Initialization (and shuffle) seed");
  o.add(app, "--out", cfg.out, "Run output directory");
  f.schedule_opt = app->add_option("--schedule", f.schedule_text, "step | cosine");
  o.add(app, "--lr0", cfg.step.lr0, "Step decay initial learning rate");
  o.add(app, "--lr-factor", cfg.step.factor, "Step decay factor");
  o.add(app, "--lr-period", cfg.step.period, "Step decay period in epochs");
  o.add(app, "--lr-hi", cfg.cosine.hi, "Cosine schedule start");
  o.add(app, "--lr-lo", cfg.cosine.lo, "Cosine schedule end");
  o.add(app, "--gamma", cfg.gamma, "Conformity penalty weight");
  o.add(app, "--clip", cfg.clip_norm, "Global gradient norm clip");
  o.add(app, "--n-pre", cfg.n_pre, "Prefix tokens");
  o.add(app, "--n-suff", cfg.n_suff, "Suffix tokens");
  o.add(app, "--m-pre", cfg.m_pre, "Prefix basis rank");
  o.add(app, "--m-suff", cfg.m_suff, "Suffix basis rank");
  o.add(app, "--batch-size", cfg.batch_size, "Prompts per optimizer step (batch mode)");
  o.add(app, "--truncate-at", cfg.truncate_at, "Forwarded to remote oracles");
  o.add(app, "--dim", cfg.synthetic.dim, "Synthetic prompt dimension");
  o.add(app, "--tokens", cfg.synthetic.tokens, "Synthetic prompt tokens");
  o.add(app, "--prompt-seed", cfg.synthetic.seed, "Synthetic prompt seed");
  o.add(app, "--prompt-count", cfg.synthetic.count, "Synthetic prompts (batch mode)");
  o.add_flag(app, "--no-range", [&cfg] { cfg.constraints.range = false; }, "Disable the [-1, 1] coefficient box");
  o.add_flag(app, "--no-orthogonality", [&cfg] { cfg.constraints.orthogonality = false; },
             "Disable basis retraction");
  f.prompts_opt = app->add_option("--prompt", f.prompt_paths, "Prompt embedding file (repeatable)");
  f.prompt_text_opt = app->add_option("--prompt-text", f.prompt_text, "Raw prompt text, encoded by a remote oracle");
}

void finish_train_flags(CliConfig& cfg, TrainFlags& f) {
  if (!f.config_path.empty()) apply_config_file(cfg, f.config_path);
  f.overrides.apply();
  if (f.mode_opt->count() > 0) cfg.mode = parse_mode(f.mode_text);
  if (f.schedule_opt->count() > 0) cfg.schedule = f.schedule_text;
  if (f.prompts_opt->count() > 0) cfg.prompts = f.prompt_paths;
  if (f.prompt_text_opt->count() > 0) cfg.prompt_text = f.prompt_text;
}

PromptEmbedding load_prompt(const std::string& path) {
  EmbeddingMatrix m = read_embedding(path);
  if (m.role != EmbeddingRole::kPrompt) {
    throw Error(ErrorCode::kBadRole, path + ": expected a prompt embedding, found " +
                                         std::string(role_name(m.role)));
  }
  return PromptEmbedding(std::move(m.mat), fs::path(path).filename().string());
}

Mat batch_mean_target(const std::vector<PromptEmbedding>& prompts) {
  Mat acc = token_mean(prompts[0].emb());
  for (std::size_t i = 1; i < prompts.size(); ++i) acc += token_mean(prompts[i].emb());
  acc *= 1.0 / static_cast<double>(prompts.size());
  return acc;
}

struct TrainingSetup {
  std::vector<PromptEmbedding> prompts;
  std::unique_ptr<RewardOracle> oracle;
};

TrainingSetup prepare(const CliConfig& cfg) {
  TrainingSetup s;
  const OracleSpec spec = parse_oracle_spec(cfg.oracle);
  RemoteOptions remote = remote_options_from_env();
  remote.truncate_at = cfg.truncate_at;

  if (cfg.prompt_text) {
    if (spec.kind != "remote") {
      throw Error(ErrorCode::kInvalidArgument, "--prompt-text needs a remote oracle to encode it");
    }
    auto oracle = remote_oracle(spec.endpoint, remote);
    s.prompts.push_back(oracle->encode(*cfg.prompt_text));
    s.oracle = std::move(oracle);
    return s;
  }
  if (!cfg.prompts.empty()) {
    for (const auto& p : cfg.prompts) s.prompts.push_back(load_prompt(p));
  } else {
    for (std::size_t i = 0; i < cfg.synthetic.count; ++i) {
      s.prompts.push_back(synthetic_prompt(cfg.synthetic.dim, cfg.synthetic.tokens, cfg.synthetic.seed + i));
    }
  }
  const Mat target = batch_mean_target(s.prompts);
  s.oracle = make_oracle(spec, s.prompts[0].dim(), &target, remote);
  return s;
}

int cmd_train(CliConfig& cfg, bool batch, std::ostream& out) {
  const TrainConfig train = resolve(cfg, batch);
  TrainingSetup setup = prepare(cfg);

  const fs::path dir = cfg.out;
  fs::create_directories(dir);
  write_file_atomic(dir / "config.json", config_to_json(cfg, batch ? "optimize-batch" : "optimize"));

  TrainResult result;
  try {
    result = batch ? train_batch(setup.prompts, *setup.oracle, train)
                   : train_promptwise(setup.prompts[0], *setup.oracle, train);
  } catch (const TrainingAborted& e) {
    std::ostringstream partial;
    write_metrics_jsonl(partial, e.partial());
    write_file_atomic(dir / "metrics.partial.jsonl", partial.str());
    throw;
  }

  std::ostringstream metrics;
  write_metrics_jsonl(metrics, result.metrics);
  write_file_atomic(dir / "metrics.jsonl", metrics.str());
  write_params(dir / "params.ipgo", result.best);
  write_insert_pair(dir / "inserts.ipgo", build_inserts(result.best));

  Json summary;
  summary["epochs"] = result.metrics.epochs.size();
  summary["initial_reward"] = result.metrics.epochs.empty() ? 0.0 : result.metrics.epochs.front().reward;
  summary["final_reward"] = result.metrics.epochs.empty() ? 0.0 : result.metrics.epochs.back().reward;
  summary["best_reward"] = result.metrics.best_reward;
  summary["best_epoch"] = result.metrics.best_epoch;
  summary["out"] = dir.string();
  out << summary.dump() << '\n';
  return 0;
}

int cmd_gen_synthetic(std::size_t dim, std::size_t tokens, std::uint64_t seed, const std::string& path,
                      std::ostream& out) {
  const PromptEmbedding p = synthetic_prompt(dim, tokens, seed);
  write_embedding(path, p.emb(), EmbeddingRole::kPrompt);
  out << "wrote " << dim << "x" << tokens << " prompt embedding to " << path << '\n';
  return 0;
}

int cmd_mix(const std::string& a, const std::string& b, double lambda, const std::string& path,
            std::ostream& out) {
  const InsertPair mixed = mix_inserts(read_insert_pair(a), read_insert_pair(b), lambda);
  write_insert_pair(path, mixed);
  out << "wrote mixed inserts (lambda=" << fmt17(lambda) << ") to " << path << '\n';
  return 0;
}

struct GradcheckArgs {
  GradCheckConfig cfg;
  std::size_t configs = 1;
  std::vector<std::string> oracles{"quadratic:1", "cosine:2", "linear:3", "net:4"};
  std::string dump_grad;
  std::string dump_mode = "ipgo";
};

int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out) {
  double worst = 0.0;
  char line[256];
  std::snprintf(line, sizeof line, "%-6s %-40s %14s %10s\n", "config", "check", "max_rel_error", "components");
  out << line;
  for (std::size_t c = 0; c < args.configs; ++c) {
    GradCheckConfig cfg = args.cfg;
    cfg.seed = args.cfg.seed + c;
    for (const auto& spec_text : args.oracles) {
      const OracleSpec spec = parse_oracle_spec(spec_text);
      if (spec.kind == "remote" || needs_target(spec)) {
        throw Error(ErrorCode::kInvalidArgument, "gradcheck needs self-contained oracles (give a seed): " + spec_text);
      }
      auto oracle = make_oracle(spec, cfg.dim, nullptr);
      for (const auto& e : run_gradcheck(cfg, *oracle)) {
        worst = std::max(worst, e.max_rel_error);
        std::snprintf(line, sizeof line, "%-6zu %-40s %14.3e %10zu\n", static_cast<std::size_t>(cfg.seed),
                      e.name.c_str(), e.max_rel_error, e.components);
        out << line;
      }
    }
  }
  const bool pass = worst < kGradTolerance;
  std::snprintf(line, sizeof line, "max relative error %.3e (tolerance %.0e): %s\n", worst, kGradTolerance,
                pass ? "PASS" : "FAIL");
  out << line;

  if (!args.dump_grad.empty()) {
    const GradCheckConfig& cfg = args.cfg;
    const InsertShape shape{cfg.dim, cfg.m, cfg.m, cfg.n_pre, cfg.n_suff};
    const InsertionParams params = random_feasible_params(shape, cfg.seed);
    const PromptEmbedding prompt = synthetic_prompt(cfg.dim, cfg.tokens, splitmix64(cfg.seed + 1));
    auto oracle = make_oracle(parse_oracle_spec(args.oracles.front()), cfg.dim, nullptr);
    const ObjectiveEval eval = evaluate_objective(params, prompt, *oracle, parse_mode(args.dump_mode), cfg.gamma);
    write_params(args.dump_grad, InsertionParams{eval.grads.prefix, eval.grads.suffix});
    out << "wrote gradient snapshot to " << args.dump_grad << '\n';
  }
  return pass ? 0 : 1;
}

struct DemoArgs {
  std::size_t count = 50;
  double kappa_lo = 5.0;
  double kappa_hi = 50.0;
  std::uint64_t seed = 2024;
  std::size_t trajectory_index = 0;
  std::string out;
};

int cmd_demo_rotation(const DemoArgs& args, std::ostream& out) {
  if (args.trajectory_index >= args.count) {
    throw Error(ErrorCode::kInvalidArgument, "--trajectory-index must be below --count");
  }
  const auto suite = quadratic_suite(args.count, args.kappa_lo, args.kappa_hi, args.seed);
  const SuiteComparison cmp = compare_on_suite(suite);

  std::string csv =
      "index,kappa,rotation_length,plain_length,rotation_steps,plain_steps,rotation_error,plain_error,"
      "max_tangency_residual\n";
  for (const auto& r : cmp.rows) {
    csv += std::to_string(r.index) + "," + fmt17(r.kappa) + "," + fmt17(r.rotation_length) + "," +
           fmt17(r.plain_length) + "," + std::to_string(r.rotation_steps) + "," +
           std::to_string(r.plain_steps) + "," + fmt17(r.rotation_error) + "," + fmt17(r.plain_error) +
           "," + fmt17(r.max_tangency_residual) + "\n";
  }

  const Quadratic2d& q = suite[args.trajectory_index].quadratic;
  const Mat origin(2, 1);
  const RotationPath rot = rotation_descent_2d(q, origin);
  const DescentPath plain = plain_gd_2d(q, origin);
  std::string traj = "method,step,x,y\n";
  for (const auto& [name, path] : {std::pair<const char*, const DescentPath*>{"rotation", &rot},
                                   std::pair<const char*, const DescentPath*>{"plain", &plain}}) {
    for (std::size_t i = 0; i < path->points.size(); ++i) {
      traj += std::string(name) + "," + std::to_string(i) + "," + fmt17(path->points[i][0]) + "," +
              fmt17(path->points[i][1]) + "\n";
    }
  }

  const fs::path dir = args.out;
  fs::create_directories(dir);
  write_file_atomic(dir / "comparison.csv", csv);
  write_file_atomic(dir / "trajectories.csv", traj);

  double max_residual = 0.0;
  double max_error = 0.0;
  for (const auto& r : cmp.rows) {
    max_residual = std::max(max_residual, r.max_tangency_residual);
    max_error = std::max({max_error, r.rotation_error, r.plain_error});
  }
  Json summary;
  summary["quadratics"] = cmp.rows.size();
  summary["rotation_not_longer_fraction"] = cmp.rotation_not_longer_fraction;
  summary["max_tangency_residual"] = max_residual;
  summary["max_final_error"] = max_error;
  summary["comparison"] = (dir / "comparison.csv").string();
  summary["trajectories"] = (dir / "trajectories.csv").string();
  out << summary.dump() << '\n';
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Constrained prefix/suffix embedding optimizer", "ipgo"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "ipgo 0.1.0");

  CliConfig train_cfg;
  TrainFlags train_flags;
  CLI::App* optimize = app.add_subcommand("optimize", "Prompt-wise training of one prompt's inserts");
  add_train_flags(optimize, train_cfg, train_flags);

  CliConfig batch_cfg;
  TrainFlags batch_flags;
  CLI::App* optimize_batch = app.add_subcommand("optimize-batch", "Shared inserts over a prompt batch");
  add_train_flags(optimize_batch, batch_cfg, batch_flags);

  std::string mix_a, mix_b, mix_out;
  double mix_lambda = 0.5;
  CLI::App* mix = app.add_subcommand("mix", "Convex combination of two insert pairs");
  mix->add_option("--a", mix_a, "First insert pair file")->required();
  mix->add_option("--b", mix_b, "Second insert pair file")->required();
  mix->add_option("--lambda", mix_lambda, "Weight of --a, in [0, 1]")->required();
  mix->add_option("--out", mix_out, "Output insert pair file")->required();

  GradcheckArgs gc;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Compare every backward pass with finite differences");
  gradcheck->add_option("--seed", gc.cfg.seed, "First config seed");
  gradcheck->add_option("--configs", gc.configs, "Number of seeded configs");
  gradcheck->add_option("--dim", gc.cfg.dim, "Embedding dimension");
  gradcheck->add_option("--m", gc.cfg.m, "Basis rank (both inserts)");
  gradcheck->add_option("--n-pre", gc.cfg.n_pre, "Prefix tokens");
  gradcheck->add_option("--n-suff", gc.cfg.n_suff, "Suffix tokens");
  gradcheck->add_option("--tokens", gc.cfg.tokens, "Prompt tokens");
  gradcheck->add_option("--gamma", gc.cfg.gamma, "Conformity weight");
  gradcheck->add_option("--fd-step", gc.cfg.h, "Finite difference step");
  gradcheck->add_option("--oracle", gc.oracles, "Seeded oracle specs (repeatable)");
  gradcheck->add_option("--dump-grad", gc.dump_grad, "Write the full-chain gradient of the first config and oracle");
  gradcheck->add_option("--dump-mode", gc.dump_mode, "Mode for --dump-grad");

  DemoArgs demo;
  CLI::App* demo_cmd = app.add_subcommand("demo-rotation", "Rotation-assisted descent vs plain descent on 2-D quadratics");
  demo_cmd->add_option("--count", demo.count, "Quadratics in the suite");
  demo_cmd->add_option("--kappa-lo", demo.kappa_lo, "Smallest condition number");
  demo_cmd->add_option("--kappa-hi", demo.kappa_hi, "Largest condition number");
  demo_cmd->add_option("--seed", demo.seed, "Suite seed");
  demo_cmd->add_option("--trajectory-index", demo.trajectory_index, "Suite entry whose paths are written");
  demo_cmd->add_option("--out", demo.out, "Output directory")->required();

  std::size_t gen_dim = 8, gen_tokens = 4;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  CLI::App* gen = app.add_subcommand("gen-synthetic", "Write a seeded unit-column Gaussian prompt embedding");
  gen->add_option("--dim", gen_dim, "Embedding dimension (even)");
  gen->add_option("--tokens", gen_tokens, "Prompt tokens");
  gen->add_option("--seed", gen_seed, "Seed");
  gen->add_option("--out", gen_out, "Output file")->required();

  std::string manifest = "fixtures/manifest.json";
  bool fixtures_write = false;
  CLI::App* regen = app.add_subcommand("regen-fixtures", "Regenerate fixtures and verify their hashes");
  regen->add_option("--manifest", manifest, "Fixture manifest");
  regen->add_flag("--write", fixtures_write, "Overwrite fixtures and manifest hashes instead of checking");

  std::string command = "ipgo";
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << "ipgo 0.1.0\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    for (CLI::App* sub : app.get_subcommands()) command = sub->get_name();
    err << error_record("usage", e.what(), command) << '\n';
    return 2;
  }

  CLI::App* chosen = app.get_subcommands().front();
  command = chosen->get_name();
  try {
    if (chosen == optimize) {
      finish_train_flags(train_cfg, train_flags);
      return cmd_train(train_cfg, false, out);
    }
    if (chosen == optimize_batch) {
      finish_train_flags(batch_cfg, batch_flags);
      return cmd_train(batch_cfg, true, out);
    }
    if (chosen == mix) return cmd_mix(mix_a, mix_b, mix_lambda, mix_out, out);
    if (chosen == gradcheck) return cmd_gradcheck(gc, out);
    if (chosen == demo_cmd) return cmd_demo_rotation(demo, out);
    if (chosen == gen) return cmd_gen_synthetic(gen_dim, gen_tokens, gen_seed, gen_out, out);
    if (chosen == regen) return regen_fixtures(manifest, fixtures_write, out, err) ? 0 : 1;
  } catch (const TrainingAborted& e) {
    err << error_record(error_code_name(e.cause_code()), e.what(), command) << '\n';
    return 1;
  } catch (const Error& e) {
    err << error_record(error_code_name(e.code()), e.what(), command) << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << error_record("io", e.what(), command) << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << error_record("internal", e.what(), command) << '\n';
    return 1;
  }
  return 2;
}

}  // namespace ipgo::cli
