#include "commands.hpp"

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "depthcal/calibration.hpp"
#include "depthcal/errors.hpp"
#include "depthcal/io.hpp"
#include "depthcal/metrics.hpp"
#include "depthcal/parallel.hpp"
#include "depthcal/synth.hpp"

namespace depthcal::cli {

namespace {

std::pair<int, int> parseBin(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw InvalidArgument("bin must look like 4x4");
  try {
    std::size_t used = 0;
    const int bx = std::stoi(s.substr(0, x), &used);
    if (used != x) throw InvalidArgument("bin must look like 4x4");
    const std::string rest = s.substr(x + 1);
    const int by = std::stoi(rest, &used);
    if (used != rest.size()) throw InvalidArgument("bin must look like 4x4");
    return {bx, by};
  } catch (const std::logic_error&) {
    throw InvalidArgument("bin must look like 4x4");
  }
}

std::string csvValue(double v) { return formatDouble(v); }

std::string csvValue(const std::optional<double>& v) { return v ? formatDouble(*v) : ""; }

}  // namespace

int simulate(const SimulateArgs& args) {
  SceneSpec scene = args.scene.empty() ? SceneSpec::defaults() : parseScene(readFile(args.scene));
  if (args.seed) scene.seed = *args.seed;
  const SyntheticDataset ds = generateDataset(scene, args.train, args.test, workerThreads());
  writeDataset(args.out, ds);
  std::cout << "wrote " << ds.frames.size() << " frames to " << args.out << "\n";
  return 0;
}

int calibrate(const CalibrateArgs& args) {
  const Dataset data = readDataset(args.dataset);
  CalibrationOptions opts;
  std::tie(opts.undistort.bin_x, opts.undistort.bin_y) = parseBin(args.bin);
  opts.undistort.degree = args.degree;
  opts.undistort.seed = args.seed;
  const CalibrationRun run = calibrate(data, opts);
  for (const std::string& w : run.warnings) std::cerr << "warning: " << w << "\n";

  std::string report =
      "id,distance,planarity_original,planarity_undistorted,global_initial,global_refined\n";
  for (const StageReport& r : run.report) {
    report += r.id + ',' + csvValue(r.distance) + ',' + csvValue(r.planarity_original) + ',' +
              csvValue(r.planarity_undistorted) + ',' + csvValue(r.global_initial) + ',' +
              csvValue(r.global_refined) + '\n';
  }
  const std::string report_path = args.report.empty() ? args.out + ".report.csv" : args.report;
  writeCalibration(args.out, run.calibration);
  writeFileAtomic(report_path, report);
  std::cout << "calibration: " << args.out << "\nreport: " << report_path << "\n"
            << "frames used: " << run.report.size() << ", refinement cost "
            << run.refined.lm.initial_cost << " -> " << run.refined.lm.final_cost << " in "
            << run.refined.lm.iterations << " iterations\n";
  return 0;
}

int correct(const CorrectArgs& args) {
  const Calibration calib = readCalibration(args.calib);
  const DepthImage image = readDepthPgm(args.in);
  writePly(args.out, correctedCloud(calib, image, workerThreads()));
  return 0;
}

int evaluate(const EvaluateArgs& args) {
  const Calibration calib = readCalibration(args.calib);
  const Dataset data = readDataset(args.dataset);
  UndistortConfig seg;
  seg.seed = calib.seed;
  seg.threads = workerThreads();

  // Held-out frames when the dataset has them; otherwise the training frames.
  const bool use_test = !data.test.empty();
  const std::vector<Frame>& frames = use_test ? data.test : data.train;
  std::string planarity = "id,distance,original,corrected\n";
  std::string global = "id,distance,original,corrected\n";
  std::string rotation = "id,distance,rot_x_deg,rot_y_deg\n";
  std::string depth = "id,distance,original,corrected\n";
  int failed = 0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const std::optional<double> truth = use_test ? data.test_distance[i] : std::nullopt;
    FrameEvaluation e;
    try {
      e = evaluateFrame(calib, frames[i], data.board, truth, seg, i);
    } catch (const Error& err) {
      std::cerr << "warning: frame " << frames[i].id << " skipped: " << err.what() << "\n";
      ++failed;
      continue;
    }
    const std::string head = e.id + ',' + csvValue(e.distance) + ',';
    planarity += head + csvValue(e.planarity_original) + ',' + csvValue(e.planarity_corrected) + '\n';
    global += head + csvValue(e.global_original) + ',' + csvValue(e.global_corrected) + '\n';
    rotation += head + csvValue(e.rotation_x_deg) + ',' + csvValue(e.rotation_y_deg) + '\n';
    if (e.depth_error_corrected) {
      depth += head + csvValue(e.depth_error_original) + ',' + csvValue(e.depth_error_corrected) +
               '\n';
    }
  }
  if (failed == static_cast<int>(frames.size())) {
    throw DegenerateInput("no frame could be evaluated");
  }
  fs::create_directories(args.out);
  const fs::path dir(args.out);
  writeFileAtomic(dir / "planarity.csv", planarity);
  writeFileAtomic(dir / "global.csv", global);
  writeFileAtomic(dir / "rotation.csv", rotation);
  writeFileAtomic(dir / "depth_vs_gt.csv", depth);
  std::cout << "evaluated " << frames.size() - failed << " frames into " << args.out << "\n";
  return 0;
}

int bench(const BenchArgs& args) {
  const Calibration calib = readCalibration(args.calib);
  // A fronto-parallel wall at a fixed depth is enough to exercise every pixel.
  const DepthImage image(calib.depth.width, calib.depth.height, args.depth);
  const int threads = workerThreads();
  OrganizedCloud single_cloud;
  OrganizedCloud multi_cloud;
  const LatencyStats single = benchmarkCorrection(calib, image, args.frames, 1, &single_cloud);
  const LatencyStats multi = benchmarkCorrection(calib, image, args.frames, threads, &multi_cloud);
  auto line = [&](const LatencyStats& s) {
    std::printf("threads=%d frames=%d mean_ms=%.3f p99_ms=%.3f max_ms=%.3f\n", s.threads, s.frames,
                s.mean_ms, s.p99_ms, s.max_ms);
  };
  std::printf("image=%dx%d\n", image.width, image.height);
  line(single);
  line(multi);
  std::printf("identical=%s\n", single_cloud.points == multi_cloud.points ? "yes" : "no");
  return 0;
}

}  // namespace depthcal::cli
