#include "ipgo/oracle_server.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <thread>
#include <vector>

#include "ipgo/error.hpp"
#include "ipgo/rng.hpp"
#include "ipgo/wire.hpp"

namespace ipgo {

namespace {

void fill_unit_column(Mat& m, std::size_t col, Rng& rng) {
  double norm2 = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    m(i, col) = rng.gaussian();
    norm2 += m(i, col) * m(i, col);
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (std::size_t i = 0; i < m.rows(); ++i) m(i, col) *= inv;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

PromptEmbedding synthetic_prompt(std::size_t dim, std::size_t tokens, std::uint64_t seed) {
  if (tokens == 0) throw Error(ErrorCode::kZeroColumns, "synthetic prompt needs at least one token");
  if (dim == 0 || dim % 2 != 0) {
    throw Error(ErrorCode::kInvalidArgument, "synthetic prompt dimension must be even and positive");
  }
  Rng rng(seed);
  Mat m(dim, tokens);
  for (std::size_t j = 0; j < tokens; ++j) fill_unit_column(m, j, rng);
  return PromptEmbedding(std::move(m), "synthetic-" + std::to_string(dim) + "x" +
                                           std::to_string(tokens) + "-" + std::to_string(seed));
}

PromptEmbedding synthetic_text_embedding(std::string_view text, std::size_t dim, std::uint64_t seed) {
  std::vector<std::string> words;
  std::istringstream ss{std::string(text)};
  for (std::string w; ss >> w;) words.push_back(w);
  if (words.empty()) words.emplace_back();
  Mat m(dim, words.size());
  for (std::size_t j = 0; j < words.size(); ++j) {
    Rng rng(fnv1a64(words[j]) ^ seed);
    fill_unit_column(m, j, rng);
  }
  return PromptEmbedding(std::move(m), "text-" + hex64(fnv1a64(text)));
}

OracleServer::OracleServer(RewardOracle& oracle, ServerOptions options)
    : oracle_(oracle), options_(std::move(options)) {}

std::string OracleServer::handle_line(std::string_view line) {
  wire::Request req;
  try {
    req = wire::parse_request(line);
  } catch (const std::exception& e) {
    return wire::to_line(wire::ErrorResponse{wire::peek_id(line), e.what()});
  }
  const std::uint64_t id = wire::request_id(req);
  try {
    const OracleDims dims = oracle_.dims();
    if (const auto* hello = std::get_if<wire::HelloRequest>(&req)) {
      if (hello->version != wire::kProtocolVersion) {
        return wire::to_line(wire::ErrorResponse{
            id, "unsupported protocol version " + std::to_string(hello->version)});
      }
      if (hello->dim != 0 && dims.dim != 0 && hello->dim != dims.dim) {
        return wire::to_line(wire::ErrorResponse{
            id, "dimension mismatch: client d=" + std::to_string(hello->dim) +
                    ", server d=" + std::to_string(dims.dim)});
      }
      wire::HelloResponse resp;
      resp.id = id;
      resp.dim = dims.dim != 0 ? dims.dim : hello->dim;
      resp.max_tokens = options_.max_tokens ? options_.max_tokens : dims.max_tokens;
      resp.name = options_.name + " (" + oracle_.describe() + ")";
      return wire::to_line(resp);
    }
    if (const auto* enc = std::get_if<wire::EncodeRequest>(&req)) {
      const std::size_t d = dims.dim != 0 ? dims.dim : options_.encode_dim;
      if (d == 0) {
        return wire::to_line(wire::ErrorResponse{id, "encode needs a fixed embedding dimension"});
      }
      PromptEmbedding p = synthetic_text_embedding(enc->text, d, options_.encode_seed);
      return wire::to_line(wire::EncodeResponse{id, p.emb(), p.id()});
    }
    const auto& ev = std::get<wire::EvaluateRequest>(req);
    AugmentedEmbedding aug;
    aug.emb = ev.emb;
    aug.n_pre = ev.n_pre;
    aug.n_suff = ev.n_suff;
    aug.k = ev.emb.cols() - ev.n_pre - ev.n_suff;
    const PromptEmbedding prompt(aug.prompt(), ev.prompt_id);
    OracleResult r = oracle_.evaluate(aug, prompt);
    return wire::to_line(wire::EvaluateResponse{id, r.reward, std::move(r.grad), std::move(r.aux)});
  } catch (const std::exception& e) {
    return wire::to_line(wire::ErrorResponse{id, e.what()});
  }
}

bool OracleServer::should_stop_before(std::string_view line) {
  if (!options_.exit_after_evaluates) return false;
  if (line.find("\"evaluate\"") == std::string_view::npos) return false;
  return ++evaluates_seen_ >= *options_.exit_after_evaluates;
}

std::size_t OracleServer::serve(std::istream& in, std::ostream& out) {
  std::size_t answered = 0;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (should_stop_before(line)) break;
    out << handle_line(line) << '\n' << std::flush;
    ++answered;
  }
  return answered;
}

namespace {

bool write_all(int fd, const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n < 0 && errno == ENOTSOCK) {
      const ssize_t w = ::write(fd, data.data() + off, data.size() - off);
      if (w < 0) {
        if (errno == EINTR) continue;
        return false;
      }
      off += static_cast<std::size_t>(w);
      continue;
    }
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    off += static_cast<std::size_t>(n);
  }
  return true;
}

}  // namespace

std::size_t OracleServer::serve_fd(int in_fd, int out_fd) {
  std::size_t answered = 0;
  std::string buffer;
  char chunk[65536];
  for (;;) {
    std::size_t nl;
    while ((nl = buffer.find('\n')) != std::string::npos) {
      std::string line = buffer.substr(0, nl);
      buffer.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (should_stop_before(line)) return answered;
      if (!write_all(out_fd, handle_line(line) + "\n")) return answered;
      ++answered;
    }
    const ssize_t n = ::read(in_fd, chunk, sizeof chunk);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return answered;
    buffer.append(chunk, static_cast<std::size_t>(n));
  }
}

void OracleServer::serve_tcp(const std::string& host, std::uint16_t port,
                             const std::function<void(std::uint16_t)>& on_bound,
                             std::size_t max_connections) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string port_text = std::to_string(port);
  if (const int rc = getaddrinfo(host.c_str(), port_text.c_str(), &hints, &res); rc != 0) {
    throw Error(ErrorCode::kTransport, "cannot resolve listen address '" + host + "': " + gai_strerror(rc));
  }
  int listener = -1;
  int last_err = 0;
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    listener = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (listener < 0) {
      last_err = errno;
      continue;
    }
    int one = 1;
    setsockopt(listener, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(listener, ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(listener, 16) == 0) break;
    last_err = errno;
    ::close(listener);
    listener = -1;
  }
  freeaddrinfo(res);
  if (listener < 0) {
    throw Error(ErrorCode::kTransport, "cannot listen on " + host + ":" + port_text + ": " +
                                           std::strerror(last_err));
  }

  sockaddr_storage bound{};
  socklen_t len = sizeof bound;
  getsockname(listener, reinterpret_cast<sockaddr*>(&bound), &len);
  std::uint16_t actual = 0;
  if (bound.ss_family == AF_INET) {
    actual = ntohs(reinterpret_cast<sockaddr_in*>(&bound)->sin_port);
  } else if (bound.ss_family == AF_INET6) {
    actual = ntohs(reinterpret_cast<sockaddr_in6*>(&bound)->sin6_port);
  }
  if (on_bound) on_bound(actual);

  std::vector<std::thread> workers;
  for (std::size_t accepted = 0; max_connections == 0 || accepted < max_connections;) {
    const int fd = ::accept4(listener, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) {
      if (errno == EINTR || errno == ECONNABORTED) continue;
      break;
    }
    ++accepted;
    int one = 1;
    setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    workers.emplace_back([this, fd] {
      serve_fd(fd, fd);
      ::close(fd);
    });
  }
  ::close(listener);
  for (auto& t : workers) t.join();
}

}  // namespace ipgo
