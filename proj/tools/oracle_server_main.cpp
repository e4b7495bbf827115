// Hosts an in-process oracle over the line protocol, on stdin/stdout or TCP.

#include <unistd.h>

#include <csignal>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "commands.hpp"
#include "ipgo/embedding_file.hpp"
#include "ipgo/error.hpp"
#include "ipgo/oracle_server.hpp"
#include "oracle_spec.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Serve an analytic reward oracle over the ipgo line protocol", "ipgo-oracle-server"};
  std::string spec_text = "quadratic";
  std::size_t dim = 0;
  std::string target_path;
  int tcp_port = -1;
  std::string host = "127.0.0.1";
  std::size_t max_connections = 0;
  std::size_t die_after = 0;
  std::size_t max_tokens = 0;
  ipgo::ServerOptions options;
  app.add_option("--oracle", spec_text, "quadratic[:SEED] | cosine[:SEED] | linear[:SEED] | net[:SEED[:WIDTH]] | null");
  app.add_option("--dim", dim, "Embedding dimension (taken from --target when given)");
  app.add_option("--target", target_path, "Prompt embedding file whose mean token is the target");
  app.add_option("--tcp", tcp_port, "Listen on this TCP port instead of stdin/stdout (0 picks one)");
  app.add_option("--host", host, "Listen address for --tcp");
  app.add_option("--max-connections", max_connections, "Exit after this many TCP connections (0 = never)");
  app.add_option("--die-after-evaluates", die_after, "Exit without replying to the Nth evaluate (fault injection)");
  app.add_option("--max-tokens", max_tokens, "Token limit announced in the handshake (0 = none)");
  app.add_option("--name", options.name, "Server name announced in the handshake");
  app.add_option("--encode-dim", options.encode_dim, "Dimension used by encode when the oracle accepts any");
  app.add_option("--encode-seed", options.encode_seed, "Seed of the stand-in text encoder");
  CLI11_PARSE(app, argc, argv);

  try {
    std::signal(SIGPIPE, SIG_IGN);
    const ipgo::cli::OracleSpec spec = ipgo::cli::parse_oracle_spec(spec_text);
    if (spec.kind == "remote") {
      throw ipgo::Error(ipgo::ErrorCode::kInvalidArgument, "the server hosts in-process oracles only");
    }
    std::optional<ipgo::Mat> target;
    if (!target_path.empty()) {
      const ipgo::EmbeddingMatrix m = ipgo::read_embedding(target_path);
      target = ipgo::token_mean(m.mat);
      if (dim == 0) dim = m.mat.rows();
    }
    auto oracle = ipgo::cli::make_oracle(spec, dim, target ? &*target : nullptr);
    if (die_after > 0) options.exit_after_evaluates = die_after;
    if (max_tokens > 0) options.max_tokens = max_tokens;
    ipgo::OracleServer server(*oracle, options);
    if (tcp_port >= 0) {
      server.serve_tcp(host, static_cast<std::uint16_t>(tcp_port),
                       [](std::uint16_t port) { std::cerr << "listening on port " << port << std::endl; },
                       max_connections);
    } else {
      server.serve_fd(STDIN_FILENO, STDOUT_FILENO);
    }
  } catch (const ipgo::Error& e) {
    std::cerr << ipgo::cli::error_record(ipgo::error_code_name(e.code()), e.what(), "ipgo-oracle-server") << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << ipgo::cli::error_record("internal", e.what(), "ipgo-oracle-server") << '\n';
    return 1;
  }
  return 0;
}
