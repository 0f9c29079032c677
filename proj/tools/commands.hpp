#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace depthcal::cli {

struct SimulateArgs {
  std::string scene;  // empty: built-in defaults
  std::string out;
  int train = 50;
  int test = 8;
  std::optional<std::uint64_t> seed;
};

struct CalibrateArgs {
  std::string dataset;
  std::string out;
  std::string report;  // empty: <out>.report.csv
  std::string bin = "4x4";
  int degree = 2;
  std::uint64_t seed = 42;
};

struct CorrectArgs {
  std::string calib;
  std::string in;
  std::string out;
};

struct EvaluateArgs {
  std::string calib;
  std::string dataset;
  std::string out;
};

struct BenchArgs {
  std::string calib;
  int frames = 100;
  double depth = 2.0;
};

int simulate(const SimulateArgs& args);
int calibrate(const CalibrateArgs& args);
int correct(const CorrectArgs& args);
int evaluate(const EvaluateArgs& args);
int bench(const BenchArgs& args);

}  // namespace depthcal::cli
