#include "vbmc/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "vbmc/rng.hpp"

namespace vbmc::cli {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_vec(const Vec& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += fmt(v[i]);
  }
  return out;
}

double parse_double(const std::string& tok, const std::string& where) {
  if (tok == "inf" || tok == "+inf") {
    return std::numeric_limits<double>::infinity();
  }
  if (tok == "-inf") return -std::numeric_limits<double>::infinity();
  if (tok == "nan") return std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    throw ConfigError(where + ": cannot parse number '" + tok + "'");
  }
  if (used != tok.size()) {
    throw ConfigError(where + ": cannot parse number '" + tok + "'");
  }
  return v;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

Vec parse_vec(const std::string& s, const std::string& where) {
  const auto toks = split_ws(s);
  Vec v(toks.size());
  for (std::size_t i = 0; i < toks.size(); ++i) {
    v[i] = parse_double(toks[i], where);
  }
  return v;
}

bool parse_bool(const std::string& s, const std::string& where) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(where + ": expected a boolean, got '" + s + "'");
}

struct IniEntry {
  std::string value;
  int line = 0;
  bool used = false;
};
using IniSection = std::map<std::string, IniEntry>;
using Ini = std::map<std::string, IniSection>;

Ini parse_ini(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  Ini ini;
  std::string line, section;
  int lineno = 0;
  auto where = [&] { return path + ":" + std::to_string(lineno); };
  while (std::getline(in, line)) {
    ++lineno;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line.erase(comment);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError(where() + ": unterminated section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) {
        throw ConfigError(where() + ": empty section name");
      }
      ini[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(where() + ": expected 'key = value'");
    }
    if (section.empty()) {
      throw ConfigError(where() + ": key outside any [section]");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where() + ": empty key");
    ini[section][key] = IniEntry{value, lineno, false};
  }
  return ini;
}

class IniReader {
 public:
  IniReader(Ini ini, std::string path)
      : ini_(std::move(ini)), path_(std::move(path)) {}

  bool has(const std::string& sec, const std::string& key) {
    auto s = ini_.find(sec);
    return s != ini_.end() && s->second.count(key) > 0;
  }
  std::string where(const std::string& sec, const std::string& key) {
    return path_ + ":" + std::to_string(ini_[sec][key].line) + ": [" + sec +
           "] " + key;
  }
  std::string get(const std::string& sec, const std::string& key) {
    ini_[sec][key].used = true;
    return ini_[sec][key].value;
  }
  std::string get_or(const std::string& sec, const std::string& key,
                     const std::string& fallback) {
    return has(sec, key) ? get(sec, key) : fallback;
  }
  void require(const std::string& sec, const std::string& key) {
    if (!has(sec, key)) {
      throw ConfigError(path_ + ": missing required key '" + key +
                        "' in section [" + sec + "]");
    }
  }
  void check_unused() {
    for (const auto& [sec, entries] : ini_) {
      for (const auto& [key, entry] : entries) {
        if (!entry.used) {
          throw ConfigError(path_ + ":" + std::to_string(entry.line) +
                            ": unknown key '" + key + "' in section [" + sec +
                            "]");
        }
      }
    }
  }

 private:
  Ini ini_;
  std::string path_;
};

BoundedSpace parse_bounds(IniReader& r) {
  r.require("bounds", "lower");
  r.require("bounds", "upper");
  const Vec lower = parse_vec(r.get("bounds", "lower"),
                              r.where("bounds", "lower"));
  const Vec upper = parse_vec(r.get("bounds", "upper"),
                              r.where("bounds", "upper"));
  if (lower.size() != upper.size()) {
    throw ConfigError(r.where("bounds", "upper") +
                      ": lower and upper have different lengths");
  }
  for (Eigen::Index d = 0; d < lower.size(); ++d) {
    if (std::isfinite(lower[d]) && std::isfinite(upper[d]) &&
        !(lower[d] < upper[d])) {
      throw ConfigError(r.where("bounds", "lower") +
                        ": lower >= upper in dimension " +
                        std::to_string(d + 1));
    }
  }
  const bool has_pl = r.has("bounds", "plausible_lower");
  const bool has_pu = r.has("bounds", "plausible_upper");
  try {
    if (has_pl || has_pu) {
      r.require("bounds", "plausible_lower");
      r.require("bounds", "plausible_upper");
      const Vec pl = parse_vec(r.get("bounds", "plausible_lower"),
                               r.where("bounds", "plausible_lower"));
      const Vec pu = parse_vec(r.get("bounds", "plausible_upper"),
                               r.where("bounds", "plausible_upper"));
      return BoundedSpace::create(lower, upper, pl, pu);
    }
    return BoundedSpace::create(lower, upper);
  } catch (const DomainError& e) {
    throw ConfigError(r.where("bounds", "lower") + ": " + e.what());
  }
}

}  // namespace

RunConfig RunConfig::parse_file(const std::string& path) {
  IniReader r(parse_ini(path), path);
  RunConfig cfg;

  // [target]
  r.require("target", "kind");
  cfg.target.kind = r.get("target", "kind");
  if (cfg.target.kind == "builtin") {
    r.require("target", "name");
    cfg.target.name = r.get("target", "name");
    if (r.has("target", "mean")) {
      cfg.target.mean = parse_vec(r.get("target", "mean"),
                                  r.where("target", "mean"));
    }
    if (r.has("target", "sd")) {
      cfg.target.sd = parse_vec(r.get("target", "sd"),
                                r.where("target", "sd"));
    }
    if (r.has("target", "noise")) {
      cfg.target.noise = parse_double(r.get("target", "noise"),
                                      r.where("target", "noise"));
    }
  } else if (cfg.target.kind == "subprocess") {
    r.require("target", "command");
    cfg.target.command = split_ws(r.get("target", "command"));
    if (r.has("target", "timeout")) {
      cfg.target.timeout = parse_double(r.get("target", "timeout"),
                                        r.where("target", "timeout"));
    }
    if (r.has("target", "reentrant")) {
      cfg.target.reentrant = parse_bool(r.get("target", "reentrant"),
                                        r.where("target", "reentrant"));
    }
  } else {
    throw ConfigError(r.where("target", "kind") +
                      ": kind must be 'builtin' or 'subprocess'");
  }

  // [bounds]
  cfg.space = parse_bounds(r);
  const int D = cfg.space.dim();
  if (r.has("bounds", "names")) {
    const auto toks = split_ws(r.get("bounds", "names"));
    if (static_cast<int>(toks.size()) != D) {
      throw ConfigError(r.where("bounds", "names") +
                        ": expected " + std::to_string(D) + " names");
    }
    cfg.names = toks;
  } else {
    for (int d = 0; d < D; ++d) {
      cfg.names.push_back("param_" + std::to_string(d + 1));
    }
  }

  // [options]
  auto int_opt = [&](const std::string& key, int fallback) {
    if (!r.has("options", key)) return fallback;
    const double v = parse_double(r.get("options", key),
                                  r.where("options", key));
    return static_cast<int>(v);
  };
  cfg.options.seed = static_cast<std::uint64_t>(int_opt("seed", 0));
  cfg.options.max_evaluations = int_opt("max_evaluations", 0);
  cfg.options.init_design_size = int_opt("init_design_size", 10);
  cfg.options.points_per_iteration = int_opt("points_per_iteration", 5);
  cfg.options.entropy_samples_final =
      int_opt("entropy_samples_final", 1 << 14);
  cfg.options.stable_iterations_required =
      int_opt("stable_iterations_required", 3);
  cfg.options.k_max = int_opt("k_max", 50);
  if (r.has("options", "reliability_threshold")) {
    cfg.options.reliability_threshold =
        parse_double(r.get("options", "reliability_threshold"),
                     r.where("options", "reliability_threshold"));
  }
  if (r.has("options", "noisy")) {
    const std::string v = r.get("options", "noisy");
    if (v == "auto") {
      cfg.options.noisy = NoiseHandling::Auto;
    } else if (v == "on") {
      cfg.options.noisy = NoiseHandling::Force;
    } else if (v == "off") {
      cfg.options.noisy = NoiseHandling::Off;
    } else {
      throw ConfigError(r.where("options", "noisy") +
                        ": expected auto, on or off");
    }
  }
  if (r.has("options", "x0")) {
    cfg.options.x0 = parse_vec(r.get("options", "x0"),
                               r.where("options", "x0"));
  }

  // [output]
  r.require("output", "directory");
  cfg.output_directory = r.get("output", "directory");

  r.check_unused();
  return cfg;
}

namespace {

// Builtin demo targets; optional additive Gaussian noise on the log density
// (reported through noise_sd) makes them usable as noisy-inference demos.
class BuiltinTarget : public Target {
 public:
  BuiltinTarget(TargetSpec spec, int dim, std::uint64_t seed)
      : spec_(std::move(spec)), dim_(dim), rng_(mix_seed(seed, 0xb117)) {
    if (spec_.name == "gaussian") {
      if (spec_.mean.size() != dim_ || spec_.sd.size() != dim_) {
        throw ConfigError(
            "gaussian builtin needs 'mean' and 'sd' vectors of length D");
      }
      if (!(spec_.sd.array() > 0.0).all()) {
        throw ConfigError("gaussian builtin needs positive sd");
      }
    } else if (spec_.name == "rosenbrock") {
      if (dim_ != 2) {
        throw ConfigError("rosenbrock builtin is two-dimensional");
      }
    } else if (spec_.name != "quadratic") {
      throw ConfigError("unknown builtin target '" + spec_.name + "'");
    }
  }

  Evaluation evaluate_raw(const Vec& x) override {
    double ld = 0.0;
    if (spec_.name == "quadratic") {
      ld = -0.5 * x.squaredNorm();
    } else if (spec_.name == "gaussian") {
      for (int d = 0; d < dim_; ++d) {
        const double z = (x[d] - spec_.mean[d]) / spec_.sd[d];
        ld += -0.5 * z * z - std::log(spec_.sd[d]) - 0.5 * kLog2Pi;
      }
    } else {  // rosenbrock likelihood with a standard normal prior
      const double a = x[1] - x[0] * x[0];
      const double b = x[0] - 1.0;
      ld = -a * a / 0.5 - 0.5 * b * b;
      ld += -0.5 * x.squaredNorm() - 0.5 * dim_ * kLog2Pi;
    }
    Evaluation ev;
    ev.x = x;
    if (spec_.noise > 0.0) {
      ld += spec_.noise * rng_.normal();
      ev.noise_sd = spec_.noise;
    }
    ev.log_density = ld;
    ev.failed = !std::isfinite(ld);
    return ev;
  }

 private:
  TargetSpec spec_;
  int dim_;
  Rng rng_;
};

}  // namespace

std::unique_ptr<Target> make_target(const TargetSpec& spec, int dim,
                                    std::uint64_t seed) {
  if (spec.kind == "builtin") {
    return std::make_unique<BuiltinTarget>(spec, dim, seed);
  }
  SubprocessConfig sc;
  sc.command = spec.command;
  sc.timeout_seconds = spec.timeout;
  sc.reentrant = spec.reentrant;
  return std::make_unique<SubprocessTarget>(std::move(sc), dim);
}

void write_vp_file(const std::string& path, const VariationalPosterior& vp,
                   const Transform& tf,
                   const std::vector<std::string>& names) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  const BoundedSpace& sp = tf.space();
  out << "format = vbmc-vp 1\n";
  out << "dim = " << vp.D() << "\n";
  out << "components = " << vp.K() << "\n";
  if (!names.empty()) {
    out << "names =";
    for (const auto& n : names) out << ' ' << n;
    out << "\n";
  }
  out << "lower = " << fmt_vec(sp.lower()) << "\n";
  out << "upper = " << fmt_vec(sp.upper()) << "\n";
  out << "plausible_lower = " << fmt_vec(sp.plausible_lower()) << "\n";
  out << "plausible_upper = " << fmt_vec(sp.plausible_upper()) << "\n";
  if (tf.has_linear_map()) {
    out << "linear_map =";
    for (int i = 0; i < vp.D(); ++i) {
      for (int j = 0; j < vp.D(); ++j) out << ' ' << fmt(tf.linear_map()(i, j));
    }
    out << "\n";
  }
  out << "weights = " << fmt_vec(vp.weights()) << "\n";
  out << "sigma = " << fmt_vec(vp.sigma()) << "\n";
  out << "lambda = " << fmt_vec(vp.lambda()) << "\n";
  for (int k = 0; k < vp.K(); ++k) {
    out << "mean_" << k + 1 << " = " << fmt_vec(vp.means().row(k).transpose())
        << "\n";
  }
}

LoadedVp load_vp_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    }
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) {
      throw ConfigError(path + ": missing key '" + key + "'");
    }
    return it->second;
  };
  if (need("format") != "vbmc-vp 1") {
    throw ConfigError(path + ": unsupported format '" + kv["format"] + "'");
  }
  const int D = static_cast<int>(parse_double(need("dim"), path));
  const int K = static_cast<int>(parse_double(need("components"), path));
  BoundedSpace space = BoundedSpace::create(
      parse_vec(need("lower"), path), parse_vec(need("upper"), path),
      parse_vec(need("plausible_lower"), path),
      parse_vec(need("plausible_upper"), path));
  Transform tf(space);
  if (kv.count("linear_map")) {
    const Vec flat = parse_vec(kv["linear_map"], path);
    if (flat.size() != D * D) {
      throw ConfigError(path + ": linear_map needs D*D entries");
    }
    Mat M(D, D);
    for (int i = 0; i < D; ++i)
      for (int j = 0; j < D; ++j) M(i, j) = flat[i * D + j];
    tf.compose_linear(M);
  }
  Vec weights = parse_vec(need("weights"), path);
  Vec sigma = parse_vec(need("sigma"), path);
  Vec lambda = parse_vec(need("lambda"), path);
  if (weights.size() != K || sigma.size() != K || lambda.size() != D) {
    throw ConfigError(path + ": inconsistent mixture sizes");
  }
  Mat means(K, D);
  for (int k = 0; k < K; ++k) {
    means.row(k) =
        parse_vec(need("mean_" + std::to_string(k + 1)), path).transpose();
  }
  LoadedVp out{VariationalPosterior(means, weights, sigma, lambda),
               std::move(tf),
               {}};
  if (kv.count("names")) out.names = split_ws(kv["names"]);
  return out;
}

void write_result_file(const std::string& path, const InferenceResult& result,
                       const Vec& posterior_mean, const Vec& posterior_sd,
                       double wall_time_seconds) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << "format = vbmc-result 1\n";
  out << "converged = " << (result.converged ? "true" : "false") << "\n";
  out << "elbo = " << fmt(result.elbo.elbo) << "\n";
  out << "elbo_sd = " << fmt(result.elbo.elbo_sd) << "\n";
  out << "expected_log_joint = " << fmt(result.elbo.expected_log_joint)
      << "\n";
  out << "entropy = " << fmt(result.elbo.entropy) << "\n";
  out << "evaluations_used = " << result.evaluations_used << "\n";
  out << "iterations = " << result.trace.size() << "\n";
  out << "components = " << result.vp.K() << "\n";
  out << "posterior_mean = " << fmt_vec(posterior_mean) << "\n";
  out << "posterior_sd = " << fmt_vec(posterior_sd) << "\n";
  out << "warnings = " << result.warnings.size() << "\n";
  for (std::size_t i = 0; i < result.warnings.size(); ++i) {
    out << "warning_" << i + 1 << " = " << result.warnings[i] << "\n";
  }
  out << "wall_time_seconds = " << fmt(wall_time_seconds) << "\n";
}

void write_trace_csv(const std::string& path,
                     const std::vector<IterationRecord>& trace) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << "iteration,cumulative_evaluations,elbo,elbo_sd,divergence,"
         "reliability_index,K,whitening_applied\n";
  for (const auto& r : trace) {
    out << r.iteration << ',' << r.cumulative_evaluations << ','
        << fmt(r.elbo) << ',' << fmt(r.elbo_sd) << ',' << fmt(r.divergence)
        << ',' << fmt(r.reliability_index) << ',' << r.K << ','
        << (r.whitening_applied ? 1 : 0) << "\n";
  }
}

void write_evaluations_csv(const std::string& path, const EvaluationLog& log,
                           const std::vector<std::string>& names) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  for (const auto& n : names) out << n << ',';
  out << "y,noise_sd\n";
  for (int i = 0; i < log.X.rows(); ++i) {
    for (int d = 0; d < log.X.cols(); ++d) out << fmt(log.X(i, d)) << ',';
    out << fmt(log.y[i]) << ',' << fmt(log.noise_sd[i]) << "\n";
  }
}

void write_samples_csv(const std::string& path, const Mat& X,
                       const std::vector<std::string>& names) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  for (std::size_t i = 0; i < names.size(); ++i) {
    out << names[i] << (i + 1 < names.size() ? ',' : '\n');
  }
  for (int i = 0; i < X.rows(); ++i) {
    for (int d = 0; d < X.cols(); ++d) {
      out << fmt(X(i, d)) << (d + 1 < X.cols() ? ',' : '\n');
    }
  }
}

int cmd_run(const std::string& config_path, std::ostream& out,
            std::ostream& err) {
  namespace fs = std::filesystem;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    RunConfig cfg = RunConfig::parse_file(config_path);
    fs::create_directories(cfg.output_directory);
    auto target =
        make_target(cfg.target, cfg.space.dim(), cfg.options.seed);

    EvaluationLog log;
    InferenceResult result = run(*target, cfg.space, cfg.options, log);

    const auto [mean, cov] = result.moments_original(
        1 << 16, mix_seed(cfg.options.seed, 0x3a3a));
    const Vec sd = cov.diagonal().array().sqrt();
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();

    const fs::path dir(cfg.output_directory);
    write_result_file((dir / "result.txt").string(), result, mean, sd, wall);
    write_vp_file((dir / "vp.txt").string(), result.vp, result.transform,
                  cfg.names);
    write_trace_csv((dir / "trace.csv").string(), result.trace);
    write_evaluations_csv((dir / "evaluations.csv").string(), log, cfg.names);

    out << "elbo = " << fmt(result.elbo.elbo) << " +/- "
        << fmt(result.elbo.elbo_sd) << "\n";
    out << "converged = " << (result.converged ? "true" : "false") << "\n";
    out << "evaluations = " << result.evaluations_used << "\n";
    out << "outputs written to " << cfg.output_directory << "\n";
    return result.converged ? 0 : 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_sample(const std::string& result_dir, int n, std::uint64_t seed,
               std::ostream& err) {
  namespace fs = std::filesystem;
  try {
    if (n < 1) throw ConfigError("sample count must be positive");
    const fs::path dir(result_dir);
    LoadedVp loaded = load_vp_file((dir / "vp.txt").string());
    const Mat V = loaded.vp.sample(n, seed);
    Mat X(n, V.cols());
    for (int i = 0; i < n; ++i) {
      X.row(i) =
          loaded.transform.to_original(V.row(i).transpose()).transpose();
    }
    std::vector<std::string> names = loaded.names;
    if (names.empty()) {
      for (int d = 0; d < V.cols(); ++d) {
        names.push_back("param_" + std::to_string(d + 1));
      }
    }
    write_samples_csv((dir / "samples.csv").string(), X, names);
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace vbmc::cli
