#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "depthcal/errors.hpp"

int main(int argc, char** argv) {
  using namespace depthcal::cli;
  CLI::App app{"depthcal: RGB-D depth camera calibration"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "render a synthetic dataset");
  s->add_option("--scene", sim.scene, "scene file (defaults when omitted)")->check(CLI::ExistingFile);
  s->add_option("--out", sim.out, "output dataset directory")->required();
  s->add_option("--train", sim.train, "training frames")->check(CLI::Range(10, 100000));
  s->add_option("--test", sim.test, "fronto-parallel test frames")->check(CLI::Range(0, 100000));
  s->add_option("--seed", sim.seed, "random seed (overrides the scene)");

  CalibrateArgs cal;
  auto* c = app.add_subcommand("calibrate", "estimate U, G, extrinsic and depth intrinsics");
  c->add_option("--dataset", cal.dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
  c->add_option("--out", cal.out, "calibration file")->required();
  c->add_option("--report", cal.report, "per-frame stage errors (CSV)");
  c->add_option("--bin", cal.bin, "control pixel spacing, e.g. 4x4");
  c->add_option("--degree", cal.degree, "polynomial degree")->check(CLI::Range(1, 4));
  c->add_option("--seed", cal.seed, "random seed");

  CorrectArgs cor;
  auto* k = app.add_subcommand("correct", "apply a calibration to one depth image");
  k->add_option("--calib", cor.calib, "calibration file")->required()->check(CLI::ExistingFile);
  k->add_option("--in", cor.in, "16-bit PGM depth image (mm)")->required()->check(CLI::ExistingFile);
  k->add_option("--out", cor.out, "ASCII PLY output")->required();

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "write planarity/global/rotation/depth CSV curves");
  e->add_option("--calib", ev.calib, "calibration file")->required()->check(CLI::ExistingFile);
  e->add_option("--dataset", ev.dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--out", ev.out, "report directory")->required();

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "time per-frame correction");
  b->add_option("--calib", be.calib, "calibration file")->required()->check(CLI::ExistingFile);
  b->add_option("--frames", be.frames, "frames to time")->check(CLI::Range(1, 1000000));
  b->add_option("--depth", be.depth, "constant depth of the synthetic frame (m)")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 2;
  }

  try {
    if (*s) return simulate(sim);
    if (*c) return calibrate(cal);
    if (*k) return correct(cor);
    if (*e) return evaluate(ev);
    if (*b) return bench(be);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 1;
}
