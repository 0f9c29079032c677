#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "depthcal/geometry.hpp"
#include "depthcal/maps.hpp"
#include "depthcal/pnp.hpp"

namespace depthcal {

/// Checkerboard inner corners detected in an RGB image, row-major R x C.
struct CornerGrid {
  int rows = 0;
  int cols = 0;
  std::vector<Vec2> points;

  const Vec2& at(int r, int c) const { return points[static_cast<std::size_t>(r) * cols + c]; }
  /// Throws InvalidArgument unless the grid is complete and inside a width x height image.
  void validate(int width, int height) const;
};

/// One calibration input unit: a depth image and the board corners seen by the RGB camera.
struct Frame {
  std::string id;
  DepthImage depth;
  CornerGrid corners;
};

struct BoardSpec {
  int rows = 0;  ///< inner corners along the board y axis
  int cols = 0;  ///< inner corners along the board x axis
  double square = 0.0;

  void validate() const;
  Vec3 corner(int r, int c) const { return {c * square, r * square, 0.0}; }
  /// Row-major corner coordinates in the board frame (z = 0).
  std::vector<Vec3> points() const;
};

struct UndistortConfig {
  int bin_x = 4;
  int bin_y = 4;
  int degree = 2;
  double kappa = 3.0;  ///< RANSAC threshold in units of sigma(z) at the seed depth
  int ransac_iterations = 300;
  double fit_radius = 120.0;  ///< pixels around the inlier centroid used for the reference plane
  int min_inliers = 500;
  double seed_max_angle_deg = 30.0;
  double seed_max_offset = 0.3;
  int max_planes = 3;  ///< planes extracted per frame when separating the wall from the rest
  int min_plane_points = 50;  ///< smallest extracted plane; the wall still needs min_inliers
  /// Wall candidates within this many thresholds of a competing plane are left to it.
  double competing_margin = 2.0;
  /// Sample depths closer than this count once when choosing the fit degree (meters).
  double min_depth_gap = 0.2;
  std::uint64_t seed = 42;
  NoiseModel noise = NoiseModel::kinectQuantization();
  int threads = 1;

  void validate() const;
};

struct FrameDistance {
  std::size_t index = 0;  ///< position in the input frame list
  double distance = 0.0;  ///< board z translation in the RGB camera frame
  RigidTransform board_pose;
};

struct FrameOrder {
  std::vector<FrameDistance> order;
  std::vector<std::string> warnings;  ///< frames dropped because PnP failed
};

/// Frames ordered nearest-first by board distance; stable for ties.
FrameOrder sortFramesByDistance(std::span<const Frame> frames, const CameraIntrinsics& rgb,
                                const BoardSpec& board);

/// Seed for wall selection: board plane in the depth frame and its mean corner depth.
struct WallSeed {
  Plane plane;
  double mean_depth = 0.0;
};

WallSeed wallSeedFromBoard(const RigidTransform& board_pose, const RigidTransform& camera_to_depth,
                           const BoardSpec& board);

/// RANSAC wall segmentation guided by the checkerboard plane. `rng_stream` selects an
/// independent random stream derived from cfg.seed.
IndexSet selectWallPoints(const OrganizedCloud& undistorted, const WallSeed& seed,
                          const UndistortConfig& cfg, std::uint64_t rng_stream = 0);

IndexSet selectWallPoints(const OrganizedCloud& undistorted, const CornerGrid& corners,
                          const RigidTransform& camera_to_depth, const CameraIntrinsics& rgb,
                          const BoardSpec& board, const UndistortConfig& cfg,
                          std::uint64_t rng_stream = 0);

/// Plane fitted to the original cloud over the inliers within cfg.fit_radius pixels of
/// the inlier centroid.
Plane fitReferencePlane(const OrganizedCloud& original, const IndexSet& inliers,
                        const UndistortConfig& cfg);

struct MapUpdateStats {
  int touched = 0;  ///< control pixels that received a sample this frame
  int refit = 0;    ///< of those, successfully refitted
};

/// Number of sample depths separated by more than max(sigma(z), min_gap).
int resolvableDepths(std::span<const DepthSample> samples, const NoiseModel& noise,
                     double min_gap = 0.0);

/// One binned map update: every inlier contributes (w, z, z_plane) to its four
/// surrounding control pixels, each control pixel appends its weighted mean and is refit.
/// Control pixels whose fit fails keep their previous function. While fewer depths are
/// resolvable than the map degree needs, the fit uses the highest degree they support.
MapUpdateStats updateMap(UndistortionMap& map, std::vector<SampleSet>& samples,
                         const OrganizedCloud& original, const IndexSet& inliers,
                         const Plane& plane, const NoiseModel& noise, bool constant_zero,
                         double min_gap = 0.0);

struct ProcessedFrame {
  std::size_t index = 0;
  double distance = 0.0;
  RigidTransform board_pose;
  IndexSet inliers;
  Plane reference;
};

struct UndistortionResult {
  UndistortionMap map;
  std::vector<SampleSet> samples;
  std::vector<ProcessedFrame> frames;  ///< in processing order
  std::vector<std::string> warnings;
};

UndistortionResult estimateUndistortionMap(std::span<const Frame> frames,
                                           const RigidTransform& camera_to_depth,
                                           const CameraIntrinsics& rgb,
                                           const CameraIntrinsics& depth,
                                           const BoardSpec& board, const UndistortConfig& cfg);

}  // namespace depthcal
