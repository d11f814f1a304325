// Reference child process for the subprocess target protocol. Reads
// newline-delimited JSON requests on stdin and answers on stdout; exits on
// stdin EOF. Used by the tests and as a template for writing targets in
// other languages.
//
// Usage: vbmc_child [--dim D] [--mode quadratic|gaussian] [--noise SD]
//                   [--nan-at ID] [--sleep-at ID] [--sleep-secs S]
//                   [--error-at ID] [--no-handshake]

#include <unistd.h>

#include <CLI11.hpp>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <nlohmann/json.hpp>
#include <random>
#include <string>
#include <vector>

using json = nlohmann::json;

int main(int argc, char** argv) {
  CLI::App app{"vbmc protocol demo child"};
  int dim = 2;
  std::string mode = "quadratic";
  double noise = 0.0;
  long nan_at = -1, sleep_at = -1, error_at = -1;
  double sleep_secs = 5.0;
  bool no_handshake = false;
  app.add_option("--dim", dim);
  app.add_option("--mode", mode);
  app.add_option("--noise", noise);
  app.add_option("--nan-at", nan_at);
  app.add_option("--sleep-at", sleep_at);
  app.add_option("--sleep-secs", sleep_secs);
  app.add_option("--error-at", error_at);
  app.add_flag("--no-handshake", no_handshake);
  CLI11_PARSE(app, argc, argv);

  std::mt19937_64 rng(12345);
  std::normal_distribution<double> gauss(0.0, 1.0);

  if (!no_handshake) {
    json hello;
    hello["hello"] = "vbmc-target";
    hello["dim"] = dim;
    std::cout << hello.dump() << "\n" << std::flush;
  }

  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    json req;
    try {
      req = json::parse(line);
    } catch (const json::exception&) {
      std::cout << R"({"error": "malformed request"})" << "\n" << std::flush;
      continue;
    }
    const long id = req.value("id", -1L);
    const std::vector<double> x = req.value("x", std::vector<double>{});

    if (id == sleep_at) {
      ::usleep(static_cast<useconds_t>(sleep_secs * 1e6));
    }
    if (id == error_at) {
      std::cout << R"({"error": "requested failure"})" << "\n" << std::flush;
      continue;
    }

    json resp;
    resp["id"] = id;
    if (id == nan_at) {
      resp["log_density"] = "nan";
    } else {
      double ld = 0.0;
      if (mode == "gaussian") {
        for (double v : x) {
          ld += -0.5 * v * v - 0.5 * std::log(2.0 * M_PI);
        }
      } else {  // quadratic
        for (double v : x) ld += -0.5 * v * v;
      }
      if (noise > 0.0) {
        ld += noise * gauss(rng);
        resp["noise_sd"] = noise;
      }
      resp["log_density"] = ld;
    }
    std::cout << resp.dump() << "\n" << std::flush;
  }
  return 0;
}
