#include <gtest/gtest.h>

#include <sstream>

#include "ipgo/oracle_server.hpp"
#include "ipgo/wire.hpp"
#include "json.hpp"
#include "reference.hpp"

namespace ipgo {
namespace {

using Json = nlohmann::json;

TEST(SyntheticPrompt, UnitColumnsAndDeterminism) {
  const PromptEmbedding p = synthetic_prompt(8, 4, 7);
  EXPECT_EQ(p.emb(), synthetic_prompt(8, 4, 7).emb());
  EXPECT_EQ(p.id(), "synthetic-8x4-7");
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(frobenius_norm(p.emb().col_block(j, 1)), 1.0, 1e-15);
}

TEST(SyntheticText, EqualWordsShareColumns) {
  const PromptEmbedding p = synthetic_text_embedding("a cat and a dog", 6, 1);
  EXPECT_EQ(p.tokens(), 5u);
  EXPECT_EQ(p.emb().col_block(0, 1), p.emb().col_block(3, 1));
  EXPECT_NE(p.emb().col_block(1, 1), p.emb().col_block(4, 1));
  EXPECT_EQ(synthetic_text_embedding("", 6, 1).tokens(), 1u);
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(OracleServer, HelloEvaluateAndErrors) {
  auto oracle = quadratic_oracle(ref::gaussian(4, 1, 1));
  ServerOptions opts;
  opts.name = "t";
  opts.max_tokens = 9;
  OracleServer server(*oracle, opts);

  const Json hello = Json::parse(server.handle_line(wire::to_line(wire::HelloRequest{1, 1, 4})));
  EXPECT_EQ(hello["ok"], true);
  EXPECT_EQ(hello["d"], 4);
  EXPECT_EQ(hello["max_tokens"], 9);

  const Json mismatch = Json::parse(server.handle_line(wire::to_line(wire::HelloRequest{2, 1, 6})));
  EXPECT_EQ(mismatch["ok"], false);
  EXPECT_EQ(mismatch["id"], 2);

  const PromptEmbedding p = synthetic_prompt(4, 2, 3);
  const AugmentedEmbedding aug = concat(ref::gaussian(4, 1, 4), p, ref::gaussian(4, 1, 5));
  const std::string line = server.handle_line(wire::to_line(wire::EvaluateRequest{3, aug.emb, p.id(), 1, 1, 1}));
  const auto resp = std::get<wire::EvaluateResponse>(wire::parse_response(line, wire::Op::kEvaluate));
  EXPECT_EQ(resp.id, 3u);
  EXPECT_EQ(resp.reward, oracle->evaluate(aug, p).reward);

  const Json garbage = Json::parse(server.handle_line("{not json"));
  EXPECT_EQ(garbage["ok"], false);
  EXPECT_TRUE(garbage["id"].is_null());
  const Json unknown = Json::parse(server.handle_line(R"({"id":5,"op":"paint"})"));
  EXPECT_EQ(unknown["id"], 5);
  EXPECT_EQ(unknown["ok"], false);
}

TEST(OracleServer, StreamLoopAnswersEveryLine) {
  auto oracle = constant_oracle(1.5);
  ServerOptions opts;
  opts.encode_dim = 4;
  OracleServer server(*oracle, opts);
  std::istringstream in(wire::to_line(wire::HelloRequest{1, 1, 0}) + "\n" +
                        wire::to_line(wire::EncodeRequest{2, "two words"}) + "\n");
  std::ostringstream out;
  EXPECT_EQ(server.serve(in, out), 2u);
  std::istringstream lines(out.str());
  std::string l1, l2;
  std::getline(lines, l1);
  std::getline(lines, l2);
  const auto enc = std::get<wire::EncodeResponse>(wire::parse_response(l2, wire::Op::kEncode));
  EXPECT_EQ(enc.emb.rows(), 4u);
  EXPECT_EQ(enc.emb.cols(), 2u);
}

TEST(OracleServer, FaultInjectionStopsWithoutReply) {
  auto oracle = constant_oracle();
  ServerOptions opts;
  opts.exit_after_evaluates = 2;
  OracleServer server(*oracle, opts);
  const PromptEmbedding p = synthetic_prompt(4, 2, 6);
  const std::string ev = wire::to_line(wire::EvaluateRequest{1, p.emb(), p.id(), 0, 0, 1});
  std::istringstream in(ev + "\n" + ev + "\n" + ev + "\n");
  std::ostringstream out;
  EXPECT_EQ(server.serve(in, out), 1u);
}

}  // namespace
}  // namespace ipgo
