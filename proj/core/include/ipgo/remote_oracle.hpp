#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "ipgo/augmentation.hpp"
#include "ipgo/rewards.hpp"
#include "ipgo/wire.hpp"

namespace ipgo {

struct RemoteOptions {
  std::chrono::milliseconds timeout{std::chrono::seconds(300)};
  // Forwarded on every evaluate call; the server decides what it means.
  int truncate_at = 1;
  // Dimension announced in the handshake; 0 skips the client-side check.
  std::size_t expected_dim = 0;
};

// Defaults with the timeout taken from IPGO_ORACLE_TIMEOUT_S when set.
// Throws kInvalidArgument if the variable is not a positive number.
RemoteOptions remote_options_from_env();

// Endpoint syntax:
//   exec:CMD ARGS...   spawn CMD and talk over its stdin/stdout
//   tcp:HOST:PORT      connect to a listening server
//   HOST:PORT          same as tcp:
//   anything else      treated as a command line (as with exec:)
// Command lines are split on whitespace; single and double quotes group.
struct Endpoint {
  enum class Kind { kExec, kTcp } kind = Kind::kExec;
  std::vector<std::string> argv;  // kExec
  std::string host;               // kTcp
  std::uint16_t port = 0;         // kTcp
  std::string text;               // the original spec, for error messages
};
Endpoint parse_endpoint(const std::string& spec);
std::vector<std::string> split_command_line(const std::string& line);

// RewardOracle over the line protocol. One request is in flight per
// connection; concurrent callers are serialized. Any transport failure or
// timeout poisons the connection, later calls fail fast with kTransport.
class RemoteOracle : public RewardOracle {
 public:
  RemoteOracle(const std::string& endpoint, RemoteOptions options = {});
  ~RemoteOracle() override;
  RemoteOracle(const RemoteOracle&) = delete;
  RemoteOracle& operator=(const RemoteOracle&) = delete;

  OracleResult evaluate(const AugmentedEmbedding& aug, const PromptEmbedding& prompt) override;
  std::string describe() const override;
  OracleDims dims() const override;

  // Asks the server to embed raw prompt text.
  PromptEmbedding encode(const std::string& text);

  const std::string& server_name() const noexcept { return server_name_; }

 private:
  struct Connection;

  std::string round_trip(const wire::Request& req);

  Endpoint endpoint_;
  RemoteOptions options_;
  std::unique_ptr<Connection> conn_;
  std::mutex mutex_;
  std::uint64_t next_id_ = 1;
  OracleDims dims_;
  std::string server_name_;
};

std::unique_ptr<RemoteOracle> remote_oracle(const std::string& endpoint, RemoteOptions options = {});

}  // namespace ipgo
