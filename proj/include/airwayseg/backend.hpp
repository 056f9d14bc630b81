#pragma once

// Segmentation backends. Every backend maps a Volume to a ProbMap on the same
// lattice; the cascade only ever talks to this interface.

#include <cerrno>
#include <cstring>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include "airwayseg/error.hpp"
#include "airwayseg/grid.hpp"
#include "airwayseg/io.hpp"
#include "airwayseg/protocol.hpp"
#include "airwayseg/region_grow.hpp"

extern char** environ;

namespace airwayseg {

enum class BackendKind { region_grow, oracle_file, external, threshold };

inline std::string to_string(BackendKind k) {
  switch (k) {
    case BackendKind::region_grow: return "region_grow";
    case BackendKind::oracle_file: return "oracle_file";
    case BackendKind::external: return "external";
    case BackendKind::threshold: return "threshold";
  }
  return "?";
}

inline BackendKind parse_backend_kind(const std::string& s) {
  if (s == "region_grow") return BackendKind::region_grow;
  if (s == "oracle_file") return BackendKind::oracle_file;
  if (s == "external") return BackendKind::external;
  if (s == "threshold") return BackendKind::threshold;
  throw Error(ErrorCode::config, "unknown backend kind '" + s +
                                     "' (expected region_grow, oracle_file, external or threshold)");
}

/// Kind plus string parameters, exactly as they appear in a config section.
///
///   region_grow : hu_low, hu_high, max_voxels, seed = "x y z", seed_below
///   oracle_file : path
///   external    : command (whitespace separated argv, "double quotes" group)
///   threshold   : hu_threshold (probability 1 where HU <= threshold)
struct BackendDescriptor {
  BackendKind kind = BackendKind::region_grow;
  std::map<std::string, std::string> parameters;

  friend bool operator==(const BackendDescriptor&, const BackendDescriptor&) = default;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string name() const = 0;
  /// Whether `run` may be called from several threads at once.
  virtual bool concurrency_safe() const { return true; }
  virtual ProbMap run(const Volume& v) const = 0;
};

// Threshold -----------------------------------------------------------------

class ThresholdBackend final : public Backend {
 public:
  explicit ThresholdBackend(double hu_threshold) : hu_threshold_(hu_threshold) {}
  std::string name() const override { return "threshold"; }
  ProbMap run(const Volume& v) const override {
    ProbMap p(v.geometry());
    for (std::size_t n = 0; n < v.size(); ++n) p[n] = v[n] <= hu_threshold_ ? 1.0f : 0.0f;
    return p;
  }

 private:
  double hu_threshold_;
};

// Region growing -------------------------------------------------------------

class RegionGrowBackend final : public Backend {
 public:
  explicit RegionGrowBackend(GrowParams params) : params_(std::move(params)) { params_.validate(); }
  std::string name() const override { return "region_grow"; }
  ProbMap run(const Volume& v) const override { return to_probmap(region_grow(v, params_)); }
  const GrowParams& params() const { return params_; }

 private:
  GrowParams params_;
};

// Oracle ---------------------------------------------------------------------

/// Answers with a stored mask sampled (nearest, through world coordinates) at
/// the query voxels; queries outside the stored mask read as background.
class OracleBackend final : public Backend {
 public:
  explicit OracleBackend(Mask truth) : truth_(std::move(truth)) {}
  explicit OracleBackend(const std::filesystem::path& path) : truth_(read_mask(path)) {}
  std::string name() const override { return "oracle_file"; }

  ProbMap run(const Volume& v) const override {
    const Geometry& q = v.geometry();
    const Geometry& t = truth_.geometry();
    if (q == t) return to_probmap(truth_);
    ProbMap p(q);
    for (std::size_t k = 0; k < q.dims[2]; ++k) {
      for (std::size_t j = 0; j < q.dims[1]; ++j) {
        for (std::size_t i = 0; i < q.dims[0]; ++i) {
          const Vec3 c = t.continuous_index(q.world(static_cast<double>(i), static_cast<double>(j),
                                                    static_cast<double>(k)));
          Index3 idx{};
          bool inside = true;
          for (int a = 0; a < 3 && inside; ++a) {
            const double r = std::floor(c[a] + 0.5);
            inside = r >= 0.0 && r < static_cast<double>(t.dims[a]);
            if (inside) idx[a] = static_cast<std::size_t>(r);
          }
          p.at(i, j, k) = inside && truth_.at(idx) ? 1.0f : 0.0f;
        }
      }
    }
    return p;
  }

 private:
  Mask truth_;
};

// External process -----------------------------------------------------------

namespace process_detail {

struct Fd {
  int fd = -1;
  Fd() = default;
  explicit Fd(int f) : fd(f) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  Fd(Fd&& o) noexcept : fd(o.fd) { o.fd = -1; }
  ~Fd() { reset(); }
  void reset() {
    if (fd >= 0) ::close(fd);
    fd = -1;
  }
};

}  // namespace process_detail

/// Splits a command line on whitespace; double quotes group words.
inline std::vector<std::string> split_command(const std::string& line) {
  std::vector<std::string> argv;
  std::string cur;
  bool in_quotes = false, have = false;
  for (char ch : line) {
    if (ch == '"') {
      in_quotes = !in_quotes;
      have = true;
    } else if (!in_quotes && (ch == ' ' || ch == '\t')) {
      if (have) argv.push_back(cur);
      cur.clear();
      have = false;
    } else {
      cur += ch;
      have = true;
    }
  }
  if (in_quotes) throw Error(ErrorCode::config, "unterminated quote in command '" + line + "'");
  if (have) argv.push_back(cur);
  return argv;
}

/// Outcome of one request/response exchange with a child process.
struct ProcessExchange {
  protocol::Bytes output;    // everything the child wrote to stdout
  bool exited_ok = false;    // exited normally with status 0
  std::string exit_reason;   // "exit code N" or "signal N"
  bool input_truncated = false;  // child closed stdin before taking all input
};

/// Launches `command`, feeds `input` to its stdin and collects its stdout
/// until EOF. Reading and writing are interleaved, so the child may stream.
inline ProcessExchange run_process(const std::vector<std::string>& command, const protocol::Bytes& input) {
  using process_detail::Fd;
  if (command.empty()) throw Error(ErrorCode::backend, "external backend: empty command");

  int in_pair[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, in_pair) != 0) {
    throw Error(ErrorCode::backend, std::string("socketpair: ") + std::strerror(errno));
  }
  Fd to_child(in_pair[0]), child_stdin(in_pair[1]);
  int out_pipe[2];
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) throw Error(ErrorCode::backend, std::string("pipe: ") + std::strerror(errno));
  Fd from_child(out_pipe[0]), child_stdout(out_pipe[1]);

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, child_stdin.fd, STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, child_stdout.fd, STDOUT_FILENO);
  std::vector<char*> argv;
  for (const auto& a : command) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  pid_t pid = -1;
  const int rc = ::posix_spawnp(&pid, argv[0], &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) {
    throw Error(ErrorCode::backend, "cannot launch '" + command[0] + "': " + std::strerror(rc));
  }
  child_stdin.reset();
  child_stdout.reset();

  ProcessExchange ex;
  std::size_t written = 0;
  if (input.empty()) {
    ::shutdown(to_child.fd, SHUT_WR);
    to_child.reset();
  }
  std::uint8_t buf[65536];
  while (from_child.fd >= 0) {
    pollfd fds[2];
    nfds_t n = 0;
    fds[n++] = {from_child.fd, POLLIN, 0};
    if (to_child.fd >= 0) fds[n++] = {to_child.fd, POLLOUT, 0};
    if (::poll(fds, n, -1) < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (n == 2 && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
      const ssize_t w = ::send(to_child.fd, input.data() + written, input.size() - written, MSG_NOSIGNAL | MSG_DONTWAIT);
      if (w < 0 && errno != EINTR && errno != EAGAIN && errno != EWOULDBLOCK) {
        ex.input_truncated = true;
        to_child.reset();
      } else if (w > 0) {
        written += static_cast<std::size_t>(w);
        if (written == input.size()) {
          ::shutdown(to_child.fd, SHUT_WR);
          to_child.reset();
        }
      }
    }
    if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
      const ssize_t r = ::read(from_child.fd, buf, sizeof buf);
      if (r > 0) {
        ex.output.insert(ex.output.end(), buf, buf + r);
      } else if (r == 0 || errno != EINTR) {
        from_child.reset();
      }
    }
  }
  if (to_child.fd >= 0) ex.input_truncated = written < input.size();
  to_child.reset();
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  ex.exited_ok = WIFEXITED(status) && WEXITSTATUS(status) == 0;
  ex.exit_reason = WIFEXITED(status) ? "exit code " + std::to_string(WEXITSTATUS(status))
                                     : "signal " + std::to_string(WTERMSIG(status));
  return ex;
}

/// Runs one protocol round trip for `v` against `command`.
inline ProbMap external_segment(const std::vector<std::string>& command, const Volume& v) {
  const ProcessExchange ex = run_process(command, protocol::encode_request(v));
  std::optional<ProbMap> result;
  std::string parse_error;
  try {
    result = protocol::decode_response(ex.output, v.geometry());
  } catch (const Error& e) {
    parse_error = e.what();
  }
  if (!ex.exited_ok) {
    throw Error(ErrorCode::backend, "external process '" + command[0] + "' failed (" + ex.exit_reason + ")" +
                                        (parse_error.empty() ? "" : ": " + parse_error));
  }
  if (!result) {
    if (ex.input_truncated) parse_error += " (child closed stdin before reading the whole request)";
    throw Error(ErrorCode::protocol, parse_error);
  }
  return std::move(*result);
}

class ExternalBackend final : public Backend {
 public:
  explicit ExternalBackend(std::vector<std::string> command) : command_(std::move(command)) {
    if (command_.empty()) throw Error(ErrorCode::config, "external backend needs a command");
  }
  std::string name() const override { return "external(" + command_[0] + ")"; }
  bool concurrency_safe() const override { return false; }
  ProbMap run(const Volume& v) const override { return external_segment(command_, v); }

 private:
  std::vector<std::string> command_;
};

// Descriptor -> backend -------------------------------------------------------

namespace backend_detail {

inline const std::string& require(const BackendDescriptor& d, const std::string& key) {
  const auto it = d.parameters.find(key);
  if (it == d.parameters.end()) {
    throw Error(ErrorCode::config, to_string(d.kind) + " backend needs parameter '" + key + "'");
  }
  return it->second;
}

inline double parse_double(const std::string& s, const std::string& key) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::config, "parameter '" + key + "': '" + s + "' is not a number");
  }
}

}  // namespace backend_detail

inline GrowParams grow_params_from(const BackendDescriptor& d) {
  using namespace backend_detail;
  GrowParams p;
  for (const auto& [key, value] : d.parameters) {
    if (key == "hu_low") p.hu_low = parse_double(value, key);
    else if (key == "hu_high") p.hu_high = parse_double(value, key);
    else if (key == "max_voxels") {
      const double mv = parse_double(value, key);
      if (mv < 1 || mv != std::floor(mv)) throw Error(ErrorCode::config, "max_voxels must be a positive integer");
      p.max_voxels = static_cast<std::size_t>(mv);
    } else if (key == "seed") {
      std::istringstream in(value);
      long long x, y, z;
      std::string extra;
      if (!(in >> x >> y >> z) || (in >> extra) || x < 0 || y < 0 || z < 0) {
        throw Error(ErrorCode::config, "seed must be three non-negative voxel indices");
      }
      p.seed = Index3{static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z)};
    } else if (key == "seed_below") {
      p.seed_below = parse_double(value, key);
    } else {
      throw Error(ErrorCode::config, "region_grow backend: unknown parameter '" + key + "'");
    }
  }
  try {
    p.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::config, e.what());
  }
  return p;
}

inline void validate(const BackendDescriptor& d) {
  using namespace backend_detail;
  switch (d.kind) {
    case BackendKind::region_grow: grow_params_from(d); break;
    case BackendKind::oracle_file: require(d, "path"); break;
    case BackendKind::external:
      if (split_command(require(d, "command")).empty()) throw Error(ErrorCode::config, "external backend: empty command");
      break;
    case BackendKind::threshold: parse_double(require(d, "hu_threshold"), "hu_threshold"); break;
  }
}

inline std::unique_ptr<Backend> make_backend(const BackendDescriptor& d) {
  using namespace backend_detail;
  try {
    switch (d.kind) {
      case BackendKind::region_grow: return std::make_unique<RegionGrowBackend>(grow_params_from(d));
      case BackendKind::oracle_file: return std::make_unique<OracleBackend>(std::filesystem::path(require(d, "path")));
      case BackendKind::external: return std::make_unique<ExternalBackend>(split_command(require(d, "command")));
      case BackendKind::threshold:
        return std::make_unique<ThresholdBackend>(parse_double(require(d, "hu_threshold"), "hu_threshold"));
    }
  } catch (const Error& e) {
    rethrow_with_context(e, "backend '" + to_string(d.kind) + "'");
  }
  throw Error(ErrorCode::config, "unreachable backend kind");
}

/// Runs a backend and checks its contract: same lattice, values in [0, 1].
/// Failures are rethrown tagged with the backend name.
inline ProbMap segment(const Backend& b, const Volume& v) {
  ProbMap p;
  try {
    p = b.run(v);
  } catch (const Error& e) {
    rethrow_with_context(e, "backend '" + b.name() + "'");
  }
  if (!(p.geometry() == v.geometry())) {
    throw Error(ErrorCode::backend, "backend '" + b.name() + "' returned a map on a different lattice");
  }
  try {
    p.validate_values();
  } catch (const Error& e) {
    throw Error(ErrorCode::backend, "backend '" + b.name() + "': " + e.what());
  }
  return p;
}

inline ProbMap segment(const BackendDescriptor& d, const Volume& v) { return segment(*make_backend(d), v); }

}  // namespace airwayseg
