#include "ipgo/remote_oracle.hpp"

#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <thread>

#include "ipgo/error.hpp"

namespace ipgo {

namespace {

using Clock = std::chrono::steady_clock;

std::string errno_text(int err) { return std::strerror(err); }

void ignore_sigpipe() {
  struct sigaction current {};
  if (sigaction(SIGPIPE, nullptr, &current) == 0 && current.sa_handler == SIG_DFL) {
    signal(SIGPIPE, SIG_IGN);
  }
}

void set_nonblocking(int fd) {
  const int flags = fcntl(fd, F_GETFL);
  if (flags >= 0) fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

void close_fd(int& fd) {
  if (fd >= 0) {
    ::close(fd);
    fd = -1;
  }
}

}  // namespace

RemoteOptions remote_options_from_env() {
  RemoteOptions opts;
  if (const char* raw = std::getenv("IPGO_ORACLE_TIMEOUT_S"); raw != nullptr && *raw != '\0') {
    char* end = nullptr;
    const double seconds = std::strtod(raw, &end);
    if (end == raw || *end != '\0' || !std::isfinite(seconds) || seconds <= 0.0) {
      throw Error(ErrorCode::kInvalidArgument,
                  std::string("IPGO_ORACLE_TIMEOUT_S must be a positive number, got '") + raw + "'");
    }
    opts.timeout = std::chrono::milliseconds(static_cast<long long>(std::ceil(seconds * 1000.0)));
  }
  return opts;
}

std::vector<std::string> split_command_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool have = false;
  char quote = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quote != 0) {
      if (c == quote) {
        quote = 0;
      } else if (c == '\\' && quote == '"' && i + 1 < line.size()) {
        cur += line[++i];
      } else {
        cur += c;
      }
    } else if (c == '\'' || c == '"') {
      quote = c;
      have = true;
    } else if (c == '\\' && i + 1 < line.size()) {
      cur += line[++i];
      have = true;
    } else if (c == ' ' || c == '\t' || c == '\n') {
      if (have) out.push_back(std::move(cur));
      cur.clear();
      have = false;
    } else {
      cur += c;
      have = true;
    }
  }
  if (quote != 0) throw Error(ErrorCode::kInvalidArgument, "unterminated quote in command: " + line);
  if (have) out.push_back(std::move(cur));
  return out;
}

namespace {

bool parse_host_port(const std::string& s, std::string& host, std::uint16_t& port) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == s.size()) return false;
  if (s.find_first_of(" \t/") != std::string::npos) return false;
  unsigned value = 0;
  const char* first = s.data() + colon + 1;
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || value == 0 || value > 65535) return false;
  host = s.substr(0, colon);
  if (host.size() >= 2 && host.front() == '[' && host.back() == ']') {
    host = host.substr(1, host.size() - 2);
  }
  port = static_cast<std::uint16_t>(value);
  return true;
}

}  // namespace

Endpoint parse_endpoint(const std::string& spec) {
  Endpoint ep;
  ep.text = spec;
  if (spec.rfind("tcp:", 0) == 0) {
    ep.kind = Endpoint::Kind::kTcp;
    if (!parse_host_port(spec.substr(4), ep.host, ep.port)) {
      throw Error(ErrorCode::kInvalidArgument, "bad tcp endpoint '" + spec + "', expected tcp:HOST:PORT");
    }
    return ep;
  }
  std::string command = spec;
  if (spec.rfind("exec:", 0) == 0) {
    command = spec.substr(5);
  } else if (parse_host_port(spec, ep.host, ep.port)) {
    ep.kind = Endpoint::Kind::kTcp;
    return ep;
  }
  ep.kind = Endpoint::Kind::kExec;
  ep.argv = split_command_line(command);
  if (ep.argv.empty()) throw Error(ErrorCode::kInvalidArgument, "empty oracle endpoint '" + spec + "'");
  return ep;
}

struct RemoteOracle::Connection {
  std::string name;  // endpoint text for messages
  int read_fd = -1;
  int write_fd = -1;
  bool is_socket = false;
  pid_t pid = -1;
  std::string buffer;
  bool broken = false;

  ~Connection() {
    // Closing the child's stdin is the shutdown signal; give it a moment to
    // exit on its own before killing it.
    if (write_fd != read_fd) close_fd(write_fd);
    close_fd(read_fd);
    write_fd = -1;
    if (pid > 0) {
      int status = 0;
      const auto deadline = Clock::now() + std::chrono::seconds(2);
      while (waitpid(pid, &status, WNOHANG) == 0) {
        if (Clock::now() >= deadline) {
          kill(pid, SIGKILL);
          waitpid(pid, &status, 0);
          break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
      }
    }
  }

  [[noreturn]] void transport_failure(const std::string& what) {
    broken = true;
    throw Error(ErrorCode::kTransport, "oracle endpoint '" + name + "': " + what);
  }

  [[noreturn]] void timed_out(std::chrono::milliseconds timeout) {
    broken = true;
    char secs[32];
    std::snprintf(secs, sizeof secs, "%g", static_cast<double>(timeout.count()) / 1000.0);
    throw Error(ErrorCode::kTimeout, "oracle endpoint '" + name + "' timed out after " + secs + " s");
  }

  int wait_for(int fd, short events, Clock::time_point deadline, std::chrono::milliseconds timeout) {
    for (;;) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
      if (left.count() <= 0) timed_out(timeout);
      pollfd p{fd, events, 0};
      const int rc = ::poll(&p, 1, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
      if (rc < 0) {
        if (errno == EINTR) continue;
        transport_failure("poll failed: " + errno_text(errno));
      }
      if (rc == 0) continue;
      return p.revents;
    }
  }

  void send_line(const std::string& line, Clock::time_point deadline, std::chrono::milliseconds timeout) {
    std::string data = line;
    data += '\n';
    std::size_t off = 0;
    while (off < data.size()) {
      wait_for(write_fd, POLLOUT, deadline, timeout);
      ssize_t n = 0;
      if (is_socket) {
        n = ::send(write_fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
      } else {
        n = ::write(write_fd, data.data() + off, data.size() - off);
      }
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        transport_failure("write failed: " + errno_text(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::string read_line(Clock::time_point deadline, std::chrono::milliseconds timeout) {
    for (;;) {
      const auto nl = buffer.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer.substr(0, nl);
        buffer.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      wait_for(read_fd, POLLIN, deadline, timeout);
      char chunk[65536];
      const ssize_t n = ::read(read_fd, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        transport_failure("read failed: " + errno_text(errno));
      }
      if (n == 0) transport_failure("connection closed before a response arrived");
      buffer.append(chunk, static_cast<std::size_t>(n));
    }
  }

  void spawn(const Endpoint& ep);
  void connect(const Endpoint& ep);
};

RemoteOracle::RemoteOracle(const std::string& endpoint, RemoteOptions options)
    : endpoint_(parse_endpoint(endpoint)), options_(options) {
  if (options_.timeout.count() <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "oracle timeout must be positive");
  }
  conn_ = std::make_unique<Connection>();
  conn_->name = endpoint_.text;
  if (endpoint_.kind == Endpoint::Kind::kExec) {
    conn_->spawn(endpoint_);
  } else {
    conn_->connect(endpoint_);
  }

  wire::HelloRequest hello;
  hello.id = next_id_++;
  hello.dim = options_.expected_dim;
  const std::string line = round_trip(hello);
  wire::Response resp;
  try {
    resp = wire::parse_response(line, wire::Op::kHello);
  } catch (const Error& e) {
    throw Error(ErrorCode::kHandshake, "oracle endpoint '" + endpoint_.text + "' sent a bad hello reply: " + e.what());
  }
  if (const auto* err = std::get_if<wire::ErrorResponse>(&resp)) {
    throw Error(ErrorCode::kHandshake,
                "oracle endpoint '" + endpoint_.text + "' rejected the handshake: " + err->message);
  }
  const auto& ok = std::get<wire::HelloResponse>(resp);
  if (ok.id != hello.id) {
    throw Error(ErrorCode::kHandshake, "oracle endpoint '" + endpoint_.text + "' answered hello with a different id");
  }
  if (ok.version != wire::kProtocolVersion) {
    throw Error(ErrorCode::kHandshake, "oracle endpoint '" + endpoint_.text + "' speaks protocol version " +
                                           std::to_string(ok.version) + ", expected " +
                                           std::to_string(wire::kProtocolVersion));
  }
  if (options_.expected_dim != 0 && ok.dim != 0 && ok.dim != options_.expected_dim) {
    throw Error(ErrorCode::kHandshake, "handshake dimension mismatch with '" + endpoint_.text +
                                           "': client d=" + std::to_string(options_.expected_dim) +
                                           ", server d=" + std::to_string(ok.dim));
  }
  dims_.dim = ok.dim;
  dims_.max_tokens = ok.max_tokens;
  server_name_ = ok.name;
}

RemoteOracle::~RemoteOracle() = default;

std::string RemoteOracle::round_trip(const wire::Request& req) {
  if (conn_->broken) {
    throw Error(ErrorCode::kTransport,
                "oracle endpoint '" + endpoint_.text + "' is unusable after an earlier failure");
  }
  const auto deadline = Clock::now() + options_.timeout;
  conn_->send_line(wire::to_line(req), deadline, options_.timeout);
  return conn_->read_line(deadline, options_.timeout);
}

namespace {

template <class T>
const T& expect_ok(const wire::Response& resp, std::uint64_t id, const std::string& endpoint, bool& broken) {
  if (const auto* err = std::get_if<wire::ErrorResponse>(&resp)) {
    if (err->id && *err->id != id) {
      broken = true;
      throw Error(ErrorCode::kProtocol, "oracle endpoint '" + endpoint + "' answered request " +
                                            std::to_string(id) + " with id " + std::to_string(*err->id));
    }
    throw Error(ErrorCode::kRemote, err->message);
  }
  const T& ok = std::get<T>(resp);
  if (ok.id != id) {
    broken = true;
    throw Error(ErrorCode::kProtocol, "oracle endpoint '" + endpoint + "' answered request " +
                                          std::to_string(id) + " with id " + std::to_string(ok.id));
  }
  return ok;
}

}  // namespace

OracleResult RemoteOracle::evaluate(const AugmentedEmbedding& aug, const PromptEmbedding& prompt) {
  if (dims_.dim != 0 && aug.dim() != dims_.dim) {
    throw Error(ErrorCode::kDimensionMismatch, "oracle '" + endpoint_.text + "' expects d=" +
                                                   std::to_string(dims_.dim) + ", got d=" +
                                                   std::to_string(aug.dim()));
  }
  if (dims_.max_tokens && aug.tokens() > *dims_.max_tokens) {
    throw Error(ErrorCode::kDimensionMismatch, "oracle '" + endpoint_.text + "' accepts at most " +
                                                   std::to_string(*dims_.max_tokens) + " tokens, got " +
                                                   std::to_string(aug.tokens()));
  }
  std::lock_guard lock(mutex_);
  wire::EvaluateRequest req;
  req.id = next_id_++;
  req.emb = aug.emb;
  req.prompt_id = prompt.id();
  req.n_pre = aug.n_pre;
  req.n_suff = aug.n_suff;
  req.truncate_at = options_.truncate_at;
  const std::string line = round_trip(req);
  wire::Response resp;
  try {
    resp = wire::parse_response(line, wire::Op::kEvaluate);
  } catch (const Error&) {
    conn_->broken = true;
    throw;
  }
  const auto& ok = expect_ok<wire::EvaluateResponse>(resp, req.id, endpoint_.text, conn_->broken);
  if (ok.grad.rows() != aug.emb.rows() || ok.grad.cols() != aug.emb.cols()) {
    throw Error(ErrorCode::kProtocol, "oracle endpoint '" + endpoint_.text + "' returned a " +
                                          ok.grad.shape_string() + " gradient for a " +
                                          aug.emb.shape_string() + " request");
  }
  return OracleResult{ok.reward, ok.grad, ok.aux};
}

PromptEmbedding RemoteOracle::encode(const std::string& text) {
  std::lock_guard lock(mutex_);
  wire::EncodeRequest req{next_id_++, text};
  const std::string line = round_trip(req);
  wire::Response resp;
  try {
    resp = wire::parse_response(line, wire::Op::kEncode);
  } catch (const Error&) {
    conn_->broken = true;
    throw;
  }
  const auto& ok = expect_ok<wire::EncodeResponse>(resp, req.id, endpoint_.text, conn_->broken);
  return PromptEmbedding(ok.emb, ok.prompt_id);
}

std::string RemoteOracle::describe() const {
  std::string out = "remote:" + endpoint_.text;
  if (!server_name_.empty()) out += " [" + server_name_ + "]";
  return out;
}

OracleDims RemoteOracle::dims() const { return dims_; }

std::unique_ptr<RemoteOracle> remote_oracle(const std::string& endpoint, RemoteOptions options) {
  return std::make_unique<RemoteOracle>(endpoint, options);
}

void RemoteOracle::Connection::spawn(const Endpoint& ep) {
  Connection& c = *this;
  ignore_sigpipe();
  int to_child[2];
  int from_child[2];
  int err_pipe[2];
  if (pipe2(to_child, O_CLOEXEC) != 0) c.transport_failure("pipe failed: " + errno_text(errno));
  if (pipe2(from_child, O_CLOEXEC) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    c.transport_failure("pipe failed: " + errno_text(errno));
  }
  if (pipe2(err_pipe, O_CLOEXEC) != 0) {
    for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
    c.transport_failure("pipe failed: " + errno_text(errno));
  }

  std::vector<char*> argv;
  argv.reserve(ep.argv.size() + 1);
  for (const auto& a : ep.argv) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);

  const pid_t pid = fork();
  if (pid < 0) {
    for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1], err_pipe[0], err_pipe[1]}) ::close(fd);
    c.transport_failure("fork failed: " + errno_text(errno));
  }
  if (pid == 0) {
    // Only async-signal-safe calls from here on.
    dup2(to_child[0], STDIN_FILENO);
    dup2(from_child[1], STDOUT_FILENO);
    execvp(argv[0], argv.data());
    const int err = errno;
    [[maybe_unused]] ssize_t w = ::write(err_pipe[1], &err, sizeof err);
    _exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  ::close(err_pipe[1]);
  c.pid = pid;
  c.write_fd = to_child[1];
  c.read_fd = from_child[0];
  set_nonblocking(c.write_fd);
  set_nonblocking(c.read_fd);

  int child_errno = 0;
  ssize_t n = 0;
  do {
    n = ::read(err_pipe[0], &child_errno, sizeof child_errno);
  } while (n < 0 && errno == EINTR);
  ::close(err_pipe[0]);
  if (n == static_cast<ssize_t>(sizeof child_errno)) {
    int status = 0;
    waitpid(pid, &status, 0);
    c.pid = -1;
    c.transport_failure("cannot start '" + ep.argv.front() + "': " + errno_text(child_errno));
  }
}

void RemoteOracle::Connection::connect(const Endpoint& ep) {
  Connection& c = *this;
  ignore_sigpipe();
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(ep.port);
  if (const int rc = getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    c.transport_failure("cannot resolve host '" + ep.host + "': " + gai_strerror(rc));
  }
  int fd = -1;
  int last_err = 0;
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) {
      last_err = errno;
      continue;
    }
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    last_err = errno;
    ::close(fd);
    fd = -1;
  }
  freeaddrinfo(res);
  if (fd < 0) c.transport_failure("cannot connect: " + errno_text(last_err));
  int one = 1;
  setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  set_nonblocking(fd);
  c.read_fd = fd;
  c.write_fd = fd;
  c.is_socket = true;
}

}  // namespace ipgo
