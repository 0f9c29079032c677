#include "depthcal/calibration.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "depthcal/errors.hpp"
#include "depthcal/metrics.hpp"
#include "depthcal/pnp.hpp"

namespace depthcal {

Calibration Calibration::identity(const CameraIntrinsics& rgb, const CameraIntrinsics& depth,
                                  int bin, int degree) {
  Calibration c;
  c.rgb = rgb;
  c.depth = depth;
  c.u_map = UndistortionMap(depth.width, depth.height, bin, bin, degree);
  c.g_map = GlobalMap(depth.width, depth.height, degree);
  return c;
}

CalibrationRun calibrate(const Dataset& data, const CalibrationOptions& options) {
  data.board.validate();
  data.rgb.validate();
  data.depth.validate();
  options.undistort.validate();
  options.global.validate();

  CalibrationRun run;
  run.stage_one = estimateUndistortionMap(data.train, data.initial_extrinsic, data.rgb, data.depth,
                                          data.board, options.undistort);
  run.warnings = run.stage_one.warnings;

  // Stage two sees every frame through the final undistortion map.
  std::vector<FrameObservation> obs;
  obs.reserve(run.stage_one.frames.size());
  for (const ProcessedFrame& pf : run.stage_one.frames) {
    const Frame& f = data.train[pf.index];
    obs.push_back({f.id, f.corners,
                   applyUndistortion(run.stage_one.map, f.depth, options.undistort.threads),
                   pf.inliers});
  }
  run.init = initGlobal(obs, data.rgb, data.depth, data.board, options.global);
  run.warnings.insert(run.warnings.end(), run.init.warnings.begin(), run.init.warnings.end());

  std::vector<FrameObservation> used;
  used.reserve(run.init.used.size());
  for (std::size_t k : run.init.used) used.push_back(obs[k]);
  run.refined = refine(run.init.state, used, data.rgb, data.board, options.global);
  if (!run.refined.lm.converged) {
    run.warnings.push_back("joint refinement stopped without converging: " +
                           run.refined.lm.termination);
  }

  Calibration& c = run.calibration;
  c.rgb = data.rgb;
  c.depth = run.refined.state.depth_intrinsics;
  c.camera_to_depth = run.refined.state.camera_to_depth;
  c.u_map = run.stage_one.map;
  c.g_map = run.refined.state.global_map;
  c.seed = options.undistort.seed;

  for (std::size_t i = 0; i < used.size(); ++i) {
    const FrameObservation& o = used[i];
    const ProcessedFrame& pf = run.stage_one.frames[run.init.used[i]];
    const Frame& f = data.train[pf.index];
    StageReport r;
    r.id = o.id;
    r.distance = pf.distance;
    r.planarity_original = planarityError(depthToCloud(f.depth, data.depth), o.inliers);
    r.planarity_undistorted = planarityError(depthToCloud(o.undistorted, data.depth), o.inliers);
    const Plane before = transformPlane(
        run.init.state.camera_to_depth * run.init.state.board_poses[i],
        Plane{Vec3::UnitZ(), 0.0});
    r.global_initial = globalError(
        applyFullCorrection(c.u_map, run.init.state.global_map, f.depth, data.depth), o.inliers,
        before);
    const Plane after = transformPlane(
        c.camera_to_depth * run.refined.state.board_poses[i], Plane{Vec3::UnitZ(), 0.0});
    r.global_refined = globalError(correctedCloud(c, f.depth), o.inliers, after);
    run.report.push_back(std::move(r));
  }
  return run;
}

OrganizedCloud correctedCloud(const Calibration& calib, const DepthImage& image, int threads) {
  return applyFullCorrection(calib.u_map, calib.g_map, image, calib.depth, threads);
}

FrameEvaluation evaluateFrame(const Calibration& calib, const Frame& frame, const BoardSpec& board,
                              std::optional<double> true_distance, const UndistortConfig& cfg,
                              std::uint64_t rng_stream) {
  const PnPResult pnp = solvePnP(board.points(), frame.corners.points, calib.rgb);
  const OrganizedCloud original = depthToCloud(frame.depth, calib.depth);
  const OrganizedCloud corrected = correctedCloud(calib, frame.depth, cfg.threads);
  const WallSeed seed = wallSeedFromBoard(pnp.pose, calib.camera_to_depth, board);
  const IndexSet inliers = selectWallPoints(corrected, seed, cfg, rng_stream);

  FrameEvaluation e;
  e.id = frame.id;
  e.distance = true_distance.value_or(pnp.pose.translation().z());
  e.inliers = inliers.size();
  e.planarity_original = planarityError(original, inliers);
  e.planarity_corrected = planarityError(corrected, inliers);
  e.global_original = globalError(original, inliers, seed.plane);
  e.global_corrected = globalError(corrected, inliers, seed.plane);

  std::vector<Vec3> pts;
  pts.reserve(inliers.size());
  for (const Pixel& px : inliers) {
    if (const auto& p = corrected.at(px.u, px.v)) pts.push_back(*p);
  }
  const Vec3 n = fitPlane(pts).normal;
  e.rotation_x_deg = rotationErrorDeg(n, Vec3::UnitX());
  e.rotation_y_deg = rotationErrorDeg(n, Vec3::UnitY());
  if (true_distance) {
    e.depth_error_original = depthVsGroundTruth(original, inliers, *true_distance);
    e.depth_error_corrected = depthVsGroundTruth(corrected, inliers, *true_distance);
  }
  return e;
}

LatencyStats benchmarkCorrection(const Calibration& calib, const DepthImage& image, int frames,
                                 int threads, OrganizedCloud* last) {
  if (frames < 1 || threads < 1) {
    throw InvalidArgument("benchmark needs at least one frame and one thread");
  }
  std::vector<double> ms;
  ms.reserve(static_cast<std::size_t>(frames));
  OrganizedCloud cloud;
  for (int i = 0; i < frames; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    cloud = correctedCloud(calib, image, threads);
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  LatencyStats s;
  s.frames = frames;
  s.threads = threads;
  for (double m : ms) s.mean_ms += m;
  s.mean_ms /= frames;
  std::sort(ms.begin(), ms.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.99 * frames)) - 1;
  s.p99_ms = ms[std::min(rank, ms.size() - 1)];
  s.max_ms = ms.back();
  if (last) *last = std::move(cloud);
  return s;
}

}  // namespace depthcal
