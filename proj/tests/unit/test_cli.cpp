#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "cli_config.hpp"
#include "commands.hpp"
#include "fixtures.hpp"
#include "ipgo/embedding_file.hpp"
#include "ipgo/error.hpp"
#include "json.hpp"
#include "oracle_spec.hpp"
#include "reference.hpp"

namespace ipgo::cli {
namespace {

using Json = nlohmann::json;
namespace fs = std::filesystem;

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Json> json_lines(const std::string& text) {
  std::vector<Json> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(Json::parse(line));
  }
  return out;
}

std::vector<std::string> small_train(const fs::path& out) {
  return {"--oracle", "quadratic", "--epochs", "40", "--seed", "3", "--dim", "8", "--tokens", "3",
          "--prompt-seed", "5", "--n-pre", "2", "--n-suff", "2", "--m-pre", "4", "--m-suff", "4",
          "--lr0", "1e-2", "--out", out.string()};
}

// Replaces the value of `flag`, or appends it when absent.
void set_flag(std::vector<std::string>& args, const std::string& flag, const std::string& value) {
  const auto it = std::find(args.begin(), args.end(), flag);
  if (it == args.end()) {
    args.insert(args.end(), {flag, value});
  } else {
    *(it + 1) = value;
  }
}

std::vector<std::string> with(std::string cmd, std::vector<std::string> rest) {
  rest.insert(rest.begin(), std::move(cmd));
  return rest;
}

TEST(CliGenSynthetic, Deterministic) {
  ref::TempDir dir("gen");
  ASSERT_EQ(run({"gen-synthetic", "--dim", "8", "--tokens", "4", "--seed", "7", "--out", (dir.path / "a").string()}).code, 0);
  ASSERT_EQ(run({"gen-synthetic", "--dim", "8", "--tokens", "4", "--seed", "7", "--out", (dir.path / "b").string()}).code, 0);
  EXPECT_EQ(slurp(dir.path / "a"), slurp(dir.path / "b"));
  const EmbeddingMatrix m = read_embedding(dir.path / "a");
  EXPECT_EQ(m.mat.rows(), 8u);
  EXPECT_EQ(m.mat.cols(), 4u);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(frobenius_norm(m.mat.col_block(j, 1)), 1.0, 1e-15);
}

TEST(CliOptimize, WritesRunDirectoryAndImproves) {
  ref::TempDir dir("opt");
  const CliRun r = run(with("optimize", small_train(dir.path / "run")));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"config.json", "metrics.jsonl", "params.ipgo", "inserts.ipgo"}) {
    EXPECT_TRUE(fs::exists(dir.path / "run" / f)) << f;
  }
  const auto lines = json_lines(slurp(dir.path / "run" / "metrics.jsonl"));
  ASSERT_EQ(lines.size(), 41u);
  EXPECT_GT(lines[39]["reward"].get<double>(), lines[0]["reward"].get<double>());
  EXPECT_TRUE(lines.back().contains("summary"));

  const Json cfg = Json::parse(slurp(dir.path / "run" / "config.json"));
  EXPECT_EQ(cfg["mode"], "ipgo");
  EXPECT_EQ(cfg["schedule"]["kind"], "step");
  EXPECT_EQ(cfg["epochs"], 40);

  const InsertionParams best = read_params(dir.path / "run" / "params.ipgo");
  EXPECT_NO_THROW(validate_params(best));
  EXPECT_EQ(read_insert_pair(dir.path / "run" / "inserts.ipgo"), build_inserts(best));
  EXPECT_EQ(Json::parse(r.out)["best_reward"], lines.back()["summary"]["best_reward"]);
}

TEST(CliOptimize, ByteIdenticalAcrossRuns) {
  ref::TempDir dir("det");
  ASSERT_EQ(run(with("optimize", small_train(dir.path / "a"))).code, 0);
  ASSERT_EQ(run(with("optimize", small_train(dir.path / "b"))).code, 0);
  for (const char* f : {"metrics.jsonl", "params.ipgo", "inserts.ipgo"}) {
    EXPECT_EQ(slurp(dir.path / "a" / f), slurp(dir.path / "b" / f)) << f;
  }
}

TEST(CliOptimizeBatch, OnePromptReproducesOptimizePlus) {
  ref::TempDir dir("batch");
  auto single = with("optimize", small_train(dir.path / "single"));
  single.insert(single.end(), {"--mode", "ipgo-plus", "--schedule", "cosine"});
  auto batch = with("optimize-batch", small_train(dir.path / "batch"));
  batch.insert(batch.end(), {"--prompt-count", "1"});
  ASSERT_EQ(run(single).code, 0);
  const CliRun b = run(batch);
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(slurp(dir.path / "single" / "metrics.jsonl"), slurp(dir.path / "batch" / "metrics.jsonl"));
  EXPECT_EQ(slurp(dir.path / "single" / "params.ipgo"), slurp(dir.path / "batch" / "params.ipgo"));
  const Json cfg = Json::parse(slurp(dir.path / "batch" / "config.json"));
  EXPECT_EQ(cfg["mode"], "ipgo-plus");
  EXPECT_EQ(cfg["schedule"]["kind"], "cosine");
}

TEST(CliOptimize, RemotePathMatchesInProcess) {
  ref::TempDir dir("remote");
  ASSERT_EQ(run({"gen-synthetic", "--dim", "8", "--tokens", "3", "--seed", "5", "--out", (dir.path / "p.ipgo").string()}).code, 0);
  const std::vector<std::string> common{"--epochs", "15", "--prompt", (dir.path / "p.ipgo").string(),
                                        "--n-pre", "2", "--n-suff", "2", "--m-pre", "3", "--m-suff", "3"};
  auto local = with("optimize", common);
  local.insert(local.end(), {"--oracle", "net:9:5", "--out", (dir.path / "local").string()});
  auto remote = with("optimize", common);
  remote.insert(remote.end(), {"--oracle", std::string("remote:exec:") + IPGO_ORACLE_SERVER_BIN + " --oracle net:9:5 --dim 8",
                               "--out", (dir.path / "remote").string()});
  ASSERT_EQ(run(local).code, 0);
  const CliRun r = run(remote);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir.path / "local" / "metrics.jsonl"), slurp(dir.path / "remote" / "metrics.jsonl"));
}

TEST(CliOptimize, MissingOracleBinaryNamesEndpoint) {
  ref::TempDir dir("missing");
  auto args = with("optimize", small_train(dir.path / "run"));
  set_flag(args, "--oracle", "remote:exec:/no/such/oracle");
  const CliRun r = run(args);
  EXPECT_EQ(r.code, 1);
  const Json rec = Json::parse(r.err);
  EXPECT_EQ(rec["error"]["code"], "transport");
  EXPECT_EQ(rec["error"]["command"], "optimize");
  EXPECT_NE(rec["error"]["message"].get<std::string>().find("/no/such/oracle"), std::string::npos);
}

TEST(CliOptimize, ServerDeathLeavesPartialMetrics) {
  ref::TempDir dir("death");
  auto args = with("optimize", small_train(dir.path / "run"));
  set_flag(args, "--oracle",
           std::string("remote:exec:") + IPGO_ORACLE_SERVER_BIN + " --oracle quadratic:1 --dim 8 --die-after-evaluates 6");
  const CliRun r = run(args);
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(Json::parse(r.err)["error"]["code"], "transport");
  EXPECT_FALSE(fs::exists(dir.path / "run" / "metrics.jsonl"));
  EXPECT_FALSE(fs::exists(dir.path / "run" / "params.ipgo"));
  const auto lines = json_lines(slurp(dir.path / "run" / "metrics.partial.jsonl"));
  EXPECT_EQ(lines.size(), 5u + 1u);
}

TEST(CliUsage, BadFlagIsUsageError) {
  const CliRun r = run({"optimize", "--epochz", "3"});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(Json::parse(r.err)["error"]["code"], "usage");
  EXPECT_EQ(run({}).code, 2);
}

TEST(CliUsage, InvalidValuesAreRejectedBeforeWork) {
  ref::TempDir dir("invalid");
  auto args = with("optimize", small_train(dir.path / "run"));
  set_flag(args, "--epochs", "0");
  const CliRun r = run(args);
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(Json::parse(r.err)["error"]["code"], "invalid_argument");
  EXPECT_FALSE(fs::exists(dir.path / "run"));
}

TEST(CliMix, LambdaOneCopiesFirstInput) {
  ref::TempDir dir("mix");
  const InsertPair a{ref::gaussian(4, 2, 1), ref::gaussian(4, 1, 2)};
  const InsertPair b{ref::gaussian(4, 2, 3), ref::gaussian(4, 1, 4)};
  write_insert_pair(dir.path / "a.ipgo", a);
  write_insert_pair(dir.path / "b.ipgo", b);
  ASSERT_EQ(run({"mix", "--a", (dir.path / "a.ipgo").string(), "--b", (dir.path / "b.ipgo").string(),
                 "--lambda", "1", "--out", (dir.path / "m.ipgo").string()})
                .code,
            0);
  EXPECT_EQ(slurp(dir.path / "m.ipgo"), slurp(dir.path / "a.ipgo"));
  EXPECT_EQ(run({"mix", "--a", (dir.path / "a.ipgo").string(), "--b", (dir.path / "b.ipgo").string(),
                 "--lambda", "2", "--out", (dir.path / "x.ipgo").string()})
                .code,
            1);
}

TEST(CliGradcheck, PassesOnScaledDownDefaults) {
  const CliRun r = run({"gradcheck", "--configs", "2"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
  EXPECT_NE(r.out.find("full_chain ipgo-plus"), std::string::npos);
}

TEST(CliGradcheck, RejectsStepOutsideUsableRange) {
  const CliRun r = run({"gradcheck", "--fd-step", "0.1", "--oracle", "net:4"});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(Json::parse(r.err)["error"]["code"], "invalid_argument");
  EXPECT_NE(run({"gradcheck", "--oracle", "quadratic"}).err.find("give a seed"), std::string::npos);
}

TEST(CliGradcheck, DumpsGradientSnapshot) {
  ref::TempDir dir("dump");
  const CliRun r = run({"gradcheck", "--dump-grad", (dir.path / "g.ipgo").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const InsertionParams g = read_params(dir.path / "g.ipgo");
  EXPECT_EQ(g.prefix.basis.rows(), 8u);
  EXPECT_EQ(g.prefix.coeffs.rows(), 2u);
}

TEST(CliDemo, WritesCsvsAndSummary) {
  ref::TempDir dir("demo");
  const CliRun r = run({"demo-rotation", "--count", "5", "--out", dir.path.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json s = Json::parse(r.out);
  EXPECT_EQ(s["quadratics"], 5);
  EXPECT_LT(s["max_tangency_residual"].get<double>(), 1e-10);
  EXPECT_LT(s["max_final_error"].get<double>(), 1e-6);
  const std::string csv = slurp(dir.path / "comparison.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  EXPECT_EQ(slurp(dir.path / "trajectories.csv").rfind("method,step,x,y\n", 0), 0u);
}

TEST(CliConfig, FileValuesAndFlagOverrides) {
  ref::TempDir dir("cfg");
  {
    std::ofstream f(dir.path / "c.json");
    f << R"({"epochs": 4, "gamma": 0.5, "schedule": {"kind": "cosine", "hi": 0.01, "lo": 0.001},
            "synthetic": {"dim": 6, "tokens": 2}, "n_pre": 1, "n_suff": 1, "m_pre": 2, "m_suff": 2})";
  }
  const CliRun r = run({"optimize", "--config", (dir.path / "c.json").string(), "--epochs", "3", "--out",
                     (dir.path / "run").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json cfg = Json::parse(slurp(dir.path / "run" / "config.json"));
  EXPECT_EQ(cfg["epochs"], 3);
  EXPECT_EQ(cfg["gamma"], 0.5);
  EXPECT_EQ(cfg["schedule"]["kind"], "cosine");
  EXPECT_EQ(cfg["synthetic"]["dim"], 6);
}

TEST(CliConfig, UnknownKeysAndBadTypesRejected) {
  CliConfig cfg;
  EXPECT_THROW(apply_config_json(cfg, R"({"epochs": 3, "epoch": 4})"), Error);
  EXPECT_THROW(apply_config_json(cfg, R"({"epochs": "three"})"), Error);
  EXPECT_THROW(apply_config_json(cfg, R"({"schedule": {"kind": "step", "lr": 1}})"), Error);
  EXPECT_THROW(apply_config_json(cfg, "not json"), Error);
  CliConfig ok;
  apply_config_json(ok, R"({"mode": "ipgo-plus", "constraints": {"range": false}})");
  EXPECT_EQ(ok.mode, Mode::kIpgoPlus);
  EXPECT_FALSE(ok.constraints.range);
}

TEST(CliConfig, ResolveDefaults) {
  CliConfig a;
  a.out = "x";
  const TrainConfig t = resolve(a, false);
  EXPECT_EQ(t.mode, Mode::kIpgo);
  EXPECT_TRUE(std::holds_alternative<StepDecay>(t.schedule));
  EXPECT_EQ(t.m_pre, 300u);
  EXPECT_EQ(t.n_pre, 10u);
  EXPECT_EQ(t.epochs, 50u);
  CliConfig b;
  b.out = "x";
  const TrainConfig tb = resolve(b, true);
  EXPECT_EQ(tb.mode, Mode::kIpgoPlus);
  EXPECT_TRUE(std::holds_alternative<CosineSchedule>(tb.schedule));
  CliConfig c;
  EXPECT_THROW(resolve(c, false), Error);  // no --out
}

TEST(CliOracleSpec, Parsing) {
  EXPECT_EQ(parse_oracle_spec("quadratic").kind, "quadratic");
  EXPECT_TRUE(needs_target(parse_oracle_spec("cosine")));
  EXPECT_EQ(parse_oracle_spec("linear:12").seed, std::optional<std::uint64_t>(12));
  const OracleSpec net = parse_oracle_spec("net:3:7");
  EXPECT_EQ(net.width, 7u);
  EXPECT_EQ(parse_oracle_spec("remote:tcp:h:1").endpoint, "tcp:h:1");
  EXPECT_THROW(parse_oracle_spec("magic"), Error);
  EXPECT_THROW(parse_oracle_spec("net:x"), Error);
  EXPECT_THROW(parse_oracle_spec("remote:"), Error);
}

TEST(CliBinary, ExitCodesFromTheRealExecutable) {
  const std::string bin = IPGO_CLI_BIN;
  EXPECT_EQ(std::system((bin + " --version > /dev/null").c_str()), 0);
  EXPECT_EQ(WEXITSTATUS(std::system((bin + " optimize --bogus 2> /dev/null").c_str())), 2);
}

TEST(Fixtures, EmptyManifestIsNoOp) {
  ref::TempDir dir("fx-empty");
  {
    std::ofstream f(dir.path / "manifest.json");
    f << R"({"version": 1, "fixtures": []})";
  }
  std::ostringstream out, err;
  EXPECT_TRUE(regen_fixtures(dir.path / "manifest.json", false, out, err));
  EXPECT_TRUE(err.str().empty());
}

TEST(Fixtures, WriteThenCheckThenDetectPerturbedSeed) {
  ref::TempDir dir("fx");
  {
    std::ofstream f(dir.path / "manifest.json");
    f << R"({"version": 1, "fixtures": [{"id": "prompt", "seed": 7,
           "command": ["gen-synthetic", "--seed", "{seed}", "--out", "{out}/p.ipgo"],
           "outputs": [{"path": "p.ipgo"}]}]})";
  }
  std::ostringstream out, err;
  ASSERT_TRUE(regen_fixtures(dir.path / "manifest.json", true, out, err)) << err.str();
  const Json written = Json::parse(slurp(dir.path / "manifest.json"));
  EXPECT_EQ(written["fixtures"][0]["outputs"][0]["sha256"], sha256_file(dir.path / "p.ipgo"));
  ASSERT_TRUE(regen_fixtures(dir.path / "manifest.json", false, out, err)) << err.str();

  Json perturbed = written;
  perturbed["fixtures"][0]["seed"] = 8;
  {
    std::ofstream f(dir.path / "manifest.json");
    f << perturbed.dump();
  }
  std::ostringstream err2;
  EXPECT_FALSE(regen_fixtures(dir.path / "manifest.json", false, out, err2));
  const Json rec = Json::parse(err2.str());
  EXPECT_EQ(rec["error"]["code"], "fixture_mismatch");
  EXPECT_NE(rec["error"]["message"].get<std::string>().find("'prompt'"), std::string::npos);
}

TEST(Fixtures, TamperedCheckedInFileDetected) {
  ref::TempDir dir("fx-tamper");
  {
    std::ofstream f(dir.path / "manifest.json");
    f << R"({"version": 1, "fixtures": [{"id": "prompt", "seed": 1,
           "command": ["gen-synthetic", "--seed", "{seed}", "--out", "{out}/p.ipgo"],
           "outputs": [{"path": "p.ipgo"}]}]})";
  }
  std::ostringstream out, err;
  ASSERT_TRUE(regen_fixtures(dir.path / "manifest.json", true, out, err));
  {
    std::ofstream f(dir.path / "p.ipgo", std::ios::app | std::ios::binary);
    f << 'x';
  }
  EXPECT_FALSE(regen_fixtures(dir.path / "manifest.json", false, out, err));
}

TEST(Fixtures, Sha256KnownVector) {
  const std::string abc = "abc";
  EXPECT_EQ(sha256_hex({reinterpret_cast<const std::uint8_t*>(abc.data()), abc.size()}),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

}  // namespace
}  // namespace ipgo::cli
