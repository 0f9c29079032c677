#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "depthcal/calib_global.hpp"
#include "depthcal/calib_undistort.hpp"
#include "depthcal/geometry.hpp"
#include "depthcal/maps.hpp"

namespace depthcal {

/// Calibration input: everything a dataset directory provides except ground truth.
struct Dataset {
  BoardSpec board;
  CameraIntrinsics rgb;
  CameraIntrinsics depth;  ///< initial guess
  RigidTransform initial_extrinsic;  ///< camera -> depth guess
  std::vector<Frame> train;
  std::vector<Frame> test;
  std::vector<std::optional<double>> test_distance;  ///< parallel to `test`
};

struct CalibrationOptions {
  UndistortConfig undistort;
  GlobalConfig global;
};

/// The calibration file contents.
struct Calibration {
  CameraIntrinsics rgb;
  CameraIntrinsics depth;
  RigidTransform camera_to_depth;
  UndistortionMap u_map;
  GlobalMap g_map;
  std::uint64_t seed = 0;

  /// Identity maps: correction leaves every depth untouched.
  static Calibration identity(const CameraIntrinsics& rgb, const CameraIntrinsics& depth,
                              int bin = 4, int degree = 2);
};

struct StageReport {
  std::string id;
  double distance = 0.0;  ///< board distance from the RGB camera
  double planarity_original = 0.0;
  double planarity_undistorted = 0.0;
  double global_initial = 0.0;  ///< before joint refinement
  double global_refined = 0.0;
};

struct CalibrationRun {
  Calibration calibration;
  UndistortionResult stage_one;
  GlobalInit init;
  RefineResult refined;
  std::vector<StageReport> report;
  std::vector<std::string> warnings;
};

CalibrationRun calibrate(const Dataset& data, const CalibrationOptions& options);

/// Corrected cloud: depth -> u -> g -> back-projection with the calibrated intrinsics.
OrganizedCloud correctedCloud(const Calibration& calib, const DepthImage& image, int threads = 1);

struct FrameEvaluation {
  std::string id;
  double distance = 0.0;  ///< true distance when known, else board distance
  std::size_t inliers = 0;
  double planarity_original = 0.0;
  double planarity_corrected = 0.0;
  double global_original = 0.0;
  double global_corrected = 0.0;
  double rotation_x_deg = 0.0;  ///< corrected wall normal against the depth x axis
  double rotation_y_deg = 0.0;
  std::optional<double> depth_error_original;
  std::optional<double> depth_error_corrected;
};

/// Segments the wall on the corrected cloud (seeded by the board) and evaluates every metric.
FrameEvaluation evaluateFrame(const Calibration& calib, const Frame& frame, const BoardSpec& board,
                              std::optional<double> true_distance, const UndistortConfig& cfg,
                              std::uint64_t rng_stream = 0);

struct LatencyStats {
  int frames = 0;
  int threads = 1;
  double mean_ms = 0.0;
  double p99_ms = 0.0;
  double max_ms = 0.0;
};

/// Times `frames` full corrections (maps plus cloud generation) of one image. The last
/// cloud is stored in `last` when given.
LatencyStats benchmarkCorrection(const Calibration& calib, const DepthImage& image, int frames,
                                 int threads, OrganizedCloud* last = nullptr);

}  // namespace depthcal
