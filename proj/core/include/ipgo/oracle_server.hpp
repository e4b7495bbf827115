#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>

#include "ipgo/augmentation.hpp"
#include "ipgo/rewards.hpp"

namespace ipgo {

// Seeded Gaussian prompt with every column scaled to unit norm.
PromptEmbedding synthetic_prompt(std::size_t dim, std::size_t tokens, std::uint64_t seed);

// Stand-in text encoder: one unit-norm Gaussian column per whitespace
// separated word, seeded by the word's FNV-1a hash, so equal words map to
// equal columns. Empty text yields a single column.
PromptEmbedding synthetic_text_embedding(std::string_view text, std::size_t dim, std::uint64_t seed);

std::uint64_t fnv1a64(std::string_view bytes);

struct ServerOptions {
  std::string name = "ipgo-oracle-server";
  std::optional<std::size_t> max_tokens;
  // Dimension for "encode" when the oracle accepts any d and no hello fixed one.
  std::size_t encode_dim = 0;
  std::uint64_t encode_seed = 0;
  // Fault injection: stop without answering once this many evaluate requests
  // have arrived. The request that trips it gets no reply.
  std::optional<std::size_t> exit_after_evaluates;
};

// Serves a RewardOracle over the line protocol. handle_line is reentrant as
// long as the wrapped oracle is; state is limited to counters.
class OracleServer {
 public:
  OracleServer(RewardOracle& oracle, ServerOptions options = {});

  // One request line in, one response line out (no trailing newline).
  // Never throws for bad input; failures become error responses.
  std::string handle_line(std::string_view line);

  // Request/response loop until EOF or fault injection. Returns the number of
  // responses written.
  std::size_t serve(std::istream& in, std::ostream& out);
  std::size_t serve_fd(int in_fd, int out_fd);

  // Listens on host:port (port 0 picks a free one) and reports the bound port
  // through on_bound before accepting. Each connection runs on its own thread.
  // Returns after max_connections connections have closed; 0 means forever.
  void serve_tcp(const std::string& host, std::uint16_t port,
                 const std::function<void(std::uint16_t)>& on_bound, std::size_t max_connections = 0);

 private:
  bool should_stop_before(std::string_view line);

  RewardOracle& oracle_;
  ServerOptions options_;
  std::atomic<std::size_t> evaluates_seen_{0};
};

}  // namespace ipgo
