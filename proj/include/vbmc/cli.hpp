#pragma once

#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vbmc/engine.hpp"

namespace vbmc::cli {

// Parsed [target] section.
struct TargetSpec {
  std::string kind;  // "builtin" or "subprocess"
  std::string name;  // builtin name: quadratic | gaussian | rosenbrock
  Vec mean, sd;      // gaussian builtin parameters
  double noise = 0.0;  // optional additive log-density noise for builtins
  std::vector<std::string> command;
  double timeout = 60.0;
  bool reentrant = false;
};

struct RunConfig {
  TargetSpec target;
  BoundedSpace space;
  Options options;
  std::string output_directory;
  std::vector<std::string> names;  // parameter names, defaults param_1..D

  static RunConfig parse_file(const std::string& path);
};

std::unique_ptr<Target> make_target(const TargetSpec& spec, int dim,
                                    std::uint64_t seed);

// Serialization of the variational posterior together with its transform;
// plain text, full round-trip precision.
void write_vp_file(const std::string& path, const VariationalPosterior& vp,
                   const Transform& tf, const std::vector<std::string>& names);

struct LoadedVp {
  VariationalPosterior vp;
  Transform transform;
  std::vector<std::string> names;
};
LoadedVp load_vp_file(const std::string& path);

void write_result_file(const std::string& path, const InferenceResult& result,
                       const Vec& posterior_mean, const Vec& posterior_sd,
                       double wall_time_seconds);
void write_trace_csv(const std::string& path,
                     const std::vector<IterationRecord>& trace);
void write_evaluations_csv(const std::string& path, const EvaluationLog& log,
                           const std::vector<std::string>& names);
void write_samples_csv(const std::string& path, const Mat& X,
                       const std::vector<std::string>& names);

// Exit codes: 0 converged, 2 finished without convergence, 1 error.
int cmd_run(const std::string& config_path, std::ostream& out,
            std::ostream& err);
int cmd_sample(const std::string& result_dir, int n, std::uint64_t seed,
               std::ostream& err);

}  // namespace vbmc::cli
