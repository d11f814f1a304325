#include "vbmc/target.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>

namespace vbmc {

namespace {

using json = nlohmann::json;

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void check_in_bounds(const BoundedSpace& space, const Vec& x) {
  if (x.size() != space.dim()) {
    throw DomainError("evaluation point dimension mismatch");
  }
  for (int d = 0; d < space.dim(); ++d) {
    if (!std::isfinite(x[d])) {
      throw DomainError("evaluation point must be finite");
    }
    if (space.bounded(d) &&
        (!(x[d] > space.lower()[d]) || !(x[d] < space.upper()[d]))) {
      std::ostringstream msg;
      msg << "evaluation point outside hard bounds in dimension " << d + 1;
      throw DomainError(msg.str());
    }
  }
}

}  // namespace

Evaluation InProcessTarget::evaluate_raw(const Vec& x) {
  Evaluation ev;
  ev.x = x;
  auto [ld, ns] = fn_(x);
  ev.log_density = ld;
  ev.noise_sd = std::isfinite(ns) && ns > 0.0 ? ns : 0.0;
  ev.failed = !std::isfinite(ld);
  return ev;
}

Evaluation evaluate(Target& target, const BoundedSpace& space, const Vec& x) {
  check_in_bounds(space, x);
  const double t0 = now_seconds();
  Evaluation ev = target.evaluate_raw(x);
  ev.wall_time = now_seconds() - t0;
  ev.x = x;
  return ev;
}

std::vector<Evaluation> evaluate_batch(Target& target,
                                       const BoundedSpace& space,
                                       const Mat& X) {
  const int n = static_cast<int>(X.rows());
  for (int i = 0; i < n; ++i) {
    check_in_bounds(space, X.row(i).transpose());
  }

  if (auto* sub = dynamic_cast<SubprocessTarget*>(&target);
      sub != nullptr && sub->reentrant()) {
    const double t0 = now_seconds();
    auto evs = sub->evaluate_raw_batch(X);
    const double per = (now_seconds() - t0) / std::max(1, n);
    for (auto& ev : evs) ev.wall_time = per;
    return evs;
  }

  std::vector<Evaluation> out(n);
  if (target.reentrant()) {
    std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
      try {
        out[i] = evaluate(target, space, X.row(i).transpose());
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
    for (int i = 0; i < n; ++i) {
      if (!errors[i].empty()) {
        std::vector<Evaluation> done(out.begin(), out.begin() + i);
        throw TargetBatchError("evaluation of batch row " +
                                   std::to_string(i + 1) +
                                   " failed: " + errors[i],
                               std::move(done));
      }
    }
    return out;
  }

  for (int i = 0; i < n; ++i) {
    try {
      out[i] = evaluate(target, space, X.row(i).transpose());
    } catch (const TargetError& e) {
      std::vector<Evaluation> done(out.begin(), out.begin() + i);
      throw TargetBatchError("evaluation of batch row " +
                                 std::to_string(i + 1) + " failed: " +
                                 e.what(),
                             std::move(done));
    }
  }
  return out;
}

SubprocessTarget::SubprocessTarget(SubprocessConfig cfg, int expected_dim)
    : cfg_(std::move(cfg)) {
  if (cfg_.command.empty()) {
    throw ConfigError("subprocess target requires a command");
  }
  ::signal(SIGPIPE, SIG_IGN);  // broken pipes surface as write errors

  int to_pipe[2], from_pipe[2];
  if (::pipe(to_pipe) != 0 || ::pipe(from_pipe) != 0) {
    throw TargetError("failed to create pipes for subprocess target");
  }
  const pid_t pid = ::fork();
  if (pid < 0) throw TargetError("fork failed for subprocess target");
  if (pid == 0) {
    ::dup2(to_pipe[0], STDIN_FILENO);
    ::dup2(from_pipe[1], STDOUT_FILENO);
    ::close(to_pipe[0]);
    ::close(to_pipe[1]);
    ::close(from_pipe[0]);
    ::close(from_pipe[1]);
    std::vector<char*> argv;
    for (auto& a : cfg_.command) argv.push_back(a.data());
    argv.push_back(nullptr);
    ::execvp(argv[0], argv.data());
    ::perror("vbmc subprocess exec");
    ::_exit(127);
  }
  child_pid_ = pid;
  to_child_ = to_pipe[1];
  from_child_ = from_pipe[0];
  ::close(to_pipe[0]);
  ::close(from_pipe[1]);

  // Handshake announces the protocol and the child's dimension.
  const std::string hello = read_line(now_seconds() + cfg_.timeout_seconds);
  try {
    const json j = json::parse(hello);
    if (j.value("hello", "") != "vbmc-target") {
      throw TargetError("subprocess handshake missing hello field: " + hello);
    }
    const int dim = j.value("dim", -1);
    if (expected_dim > 0 && dim != expected_dim) {
      throw TargetError("subprocess dimension mismatch: child declared " +
                        std::to_string(dim) + ", expected " +
                        std::to_string(expected_dim));
    }
  } catch (const json::exception&) {
    throw TargetError("malformed subprocess handshake: " + hello);
  }
}

SubprocessTarget::~SubprocessTarget() { shutdown(); }

void SubprocessTarget::shutdown() {
  if (to_child_ >= 0) {
    ::close(to_child_);  // child exits on stdin EOF
    to_child_ = -1;
  }
  if (from_child_ >= 0) {
    ::close(from_child_);
    from_child_ = -1;
  }
  if (child_pid_ > 0) {
    const double deadline = now_seconds() + 2.0;
    int status = 0;
    while (now_seconds() < deadline) {
      if (::waitpid(child_pid_, &status, WNOHANG) != 0) {
        child_pid_ = -1;
        return;
      }
      ::usleep(10000);
    }
    ::kill(child_pid_, SIGKILL);
    ::waitpid(child_pid_, &status, 0);
    child_pid_ = -1;
  }
}

std::string SubprocessTarget::read_line(double deadline_seconds) {
  while (true) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    const double remaining = deadline_seconds - now_seconds();
    if (remaining <= 0.0) {
      ::kill(child_pid_, SIGKILL);
      throw TargetError("subprocess target timed out after " +
                        std::to_string(cfg_.timeout_seconds) + " s");
    }
    struct pollfd pfd{from_child_, POLLIN, 0};
    const int pr = ::poll(&pfd, 1, static_cast<int>(remaining * 1000) + 1);
    if (pr < 0) throw TargetError("poll on subprocess pipe failed");
    if (pr == 0) continue;
    char chunk[4096];
    const ssize_t got = ::read(from_child_, chunk, sizeof(chunk));
    if (got < 0) throw TargetError("read from subprocess failed");
    if (got == 0) {
      throw TargetError("subprocess closed its output unexpectedly");
    }
    buffer_.append(chunk, static_cast<std::size_t>(got));
  }
}

void SubprocessTarget::write_line(const std::string& line) {
  std::string msg = line;
  msg.push_back('\n');
  std::size_t off = 0;
  while (off < msg.size()) {
    const ssize_t put = ::write(to_child_, msg.data() + off, msg.size() - off);
    if (put <= 0) {
      throw TargetError("write to subprocess failed (child gone?)");
    }
    off += static_cast<std::size_t>(put);
  }
}

Evaluation SubprocessTarget::parse_response(const std::string& line,
                                            const Vec& x, long expected_id,
                                            bool allow_any_id,
                                            long* got_id) const {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception&) {
    throw TargetError("malformed subprocess response: " + line);
  }
  if (j.contains("error")) {
    throw TargetError("subprocess reported: " +
                      j["error"].get<std::string>());
  }
  if (!j.contains("id") || !j["id"].is_number_integer()) {
    throw TargetError("subprocess response missing id: " + line);
  }
  const long id = j["id"].get<long>();
  if (!allow_any_id && id != expected_id) {
    throw TargetError("subprocess answered out of order (id " +
                      std::to_string(id) + ", expected " +
                      std::to_string(expected_id) + ")");
  }
  if (got_id != nullptr) *got_id = id;

  Evaluation ev;
  ev.x = x;
  if (!j.contains("log_density")) {
    throw TargetError("subprocess response missing log_density: " + line);
  }
  const auto& ld = j["log_density"];
  if (ld.is_string()) {
    if (ld.get<std::string>() == "nan") {
      ev.failed = true;
      ev.log_density = std::numeric_limits<double>::quiet_NaN();
    } else {
      throw TargetError("unrecognized log_density value: " + line);
    }
  } else if (ld.is_number()) {
    ev.log_density = ld.get<double>();
    ev.failed = !std::isfinite(ev.log_density);
  } else {
    throw TargetError("unrecognized log_density value: " + line);
  }
  const double ns = j.value("noise_sd", 0.0);
  ev.noise_sd = std::isfinite(ns) && ns > 0.0 ? ns : 0.0;
  return ev;
}

Evaluation SubprocessTarget::evaluate_raw(const Vec& x) {
  const long id = next_id_++;
  json req;
  req["id"] = id;
  req["x"] = std::vector<double>(x.data(), x.data() + x.size());
  write_line(req.dump());
  const std::string line = read_line(now_seconds() + cfg_.timeout_seconds);
  return parse_response(line, x, id, /*allow_any_id=*/false, nullptr);
}

std::vector<Evaluation> SubprocessTarget::evaluate_raw_batch(const Mat& X) {
  const int n = static_cast<int>(X.rows());
  const long first_id = next_id_;
  for (int i = 0; i < n; ++i) {
    json req;
    req["id"] = next_id_++;
    // Eigen rows are not contiguous; serialize explicitly.
    std::vector<double> coords(X.cols());
    for (int d = 0; d < X.cols(); ++d) coords[d] = X(i, d);
    req["x"] = coords;
    write_line(req.dump());
  }
  std::vector<Evaluation> out(n);
  std::vector<bool> seen(n, false);
  for (int k = 0; k < n; ++k) {
    const std::string line = read_line(now_seconds() + cfg_.timeout_seconds);
    long id = -1;
    Evaluation ev = parse_response(line, Vec(), first_id, true, &id);
    const long slot = id - first_id;
    if (slot < 0 || slot >= n || seen[slot]) {
      throw TargetError("subprocess answered with unknown id " +
                        std::to_string(id));
    }
    ev.x = X.row(slot).transpose();
    out[slot] = ev;
    seen[slot] = true;
  }
  return out;
}

}  // namespace vbmc
