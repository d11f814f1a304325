#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "vbmc/bounded_space.hpp"
#include "vbmc/errors.hpp"

namespace vbmc {

// One call to the user's black-box log joint. A non-finite log density is a
// failed evaluation, not a crash; the engine decides the policy.
struct Evaluation {
  Vec x;  // original space
  double log_density = 0.0;
  double noise_sd = 0.0;  // target's own estimate of its noise, 0 = exact
  double wall_time = 0.0;
  bool failed = false;
};

// Batch failure carrying whatever completed before the error.
struct TargetBatchError : TargetError {
  TargetBatchError(const std::string& msg, std::vector<Evaluation> done)
      : TargetError(msg), partial(std::move(done)) {}
  std::vector<Evaluation> partial;
};

class Target {
 public:
  virtual ~Target() = default;
  // Raw single evaluation; bounds checking and timing happen in evaluate().
  virtual Evaluation evaluate_raw(const Vec& x) = 0;
  virtual bool reentrant() const { return false; }
};

// Bounds-enforcing wrapper: the engine never sends an out-of-bounds x.
Evaluation evaluate(Target& target, const BoundedSpace& space, const Vec& x);

// Order-preserving batch. Evaluations run concurrently only for reentrant
// targets; results are always applied in row order.
std::vector<Evaluation> evaluate_batch(Target& target,
                                       const BoundedSpace& space,
                                       const Mat& X);

class InProcessTarget : public Target {
 public:
  // fn returns (log_density, noise_sd).
  using Fn = std::function<std::pair<double, double>(const Vec&)>;
  explicit InProcessTarget(Fn fn, bool reentrant = false)
      : fn_(std::move(fn)), reentrant_(reentrant) {}
  Evaluation evaluate_raw(const Vec& x) override;
  bool reentrant() const override { return reentrant_; }

 private:
  Fn fn_;
  bool reentrant_;
};

struct SubprocessConfig {
  std::vector<std::string> command;  // argv, command[0] = executable
  double timeout_seconds = 60.0;
  bool reentrant = false;
};

// Persistent child process speaking newline-delimited JSON over its standard
// input/output. Protocol: the child first sends
//   {"hello": "vbmc-target", "dim": <D>}
// then answers each request {"id": <n>, "x": [..]} with one line
//   {"id": <n>, "log_density": <number or "nan">, "noise_sd": <number>}
// (noise_sd optional). A line starting with {"error": reports a failure.
// The child is terminated by closing its standard input.
class SubprocessTarget : public Target {
 public:
  SubprocessTarget(SubprocessConfig cfg, int expected_dim);
  ~SubprocessTarget() override;
  SubprocessTarget(const SubprocessTarget&) = delete;
  SubprocessTarget& operator=(const SubprocessTarget&) = delete;

  Evaluation evaluate_raw(const Vec& x) override;
  bool reentrant() const override { return cfg_.reentrant; }

  // Pipelined batch: all requests written up front, responses matched by id.
  std::vector<Evaluation> evaluate_raw_batch(const Mat& X);

 private:
  std::string read_line(double deadline_seconds);
  void write_line(const std::string& line);
  Evaluation parse_response(const std::string& line, const Vec& x,
                            long expected_id, bool allow_any_id,
                            long* got_id) const;
  void shutdown();

  SubprocessConfig cfg_;
  int child_pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
  long next_id_ = 0;
};

}  // namespace vbmc
