#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "depthcal/calib_undistort.hpp"
#include "depthcal/geometry.hpp"
#include "depthcal/maps.hpp"

namespace depthcal {

/// Known depth error of a simulated sensor. Stored in correction form so the true depth of
/// an observation o at pixel (u, v) is bias(u, v, field(u, v, o)); rendering inverts it.
struct GroundTruthDistortion {
  UndistortionMap field;  ///< per-control quadratics on a bilinear grid
  GlobalMap bias;         ///< depth-only (uniform) global error
  std::string description;

  /// No distortion and no bias.
  static GroundTruthDistortion none(int width, int height, int bin = 4);

  /// Radial bowl plus an optional horizontal tilt: true = o - k(u, v) o^2. The radial part
  /// is zero within `plateau` pixels of the principal point and grows quadratically to the
  /// image corners. The amplitude is scaled so that a fronto-parallel wall at `depth` shows a
  /// planarity error of `rms` meters through `intrinsics`.
  static GroundTruthDistortion bowl(const CameraIntrinsics& intrinsics, double rms, double depth,
                                    double tilt_ratio = 0.0, double plateau = 0.0, int bin = 4);

  /// Uniform global error given as true = c1 o + c2 o^2.
  void setBias(double c1, double c2);

  double correct(int u, int v, double observed) const;
  /// Observed depth that corrects to `true_depth`; <= 0 when none exists.
  double observe(int u, int v, double true_depth) const;

  /// Throws InvalidArgument unless the correction is increasing in depth on [lo, hi].
  void validate(double lo = 0.5, double hi = 5.0) const;
};

/// RMS distance to its best-fit plane of a noise-free fronto-parallel wall at `depth`
/// as seen through the distortion.
double injectedPlanarityRms(const GroundTruthDistortion& truth, const CameraIntrinsics& intrinsics,
                            double depth);

enum class PixelLabel : std::uint8_t { none = 0, wall = 1, floor = 2 };

struct SensorPose {
  RigidTransform depth_to_world;
  bool test = false;
  double true_distance = 0.0;  ///< wall distance along the optical axis
};

struct SceneSpec {
  Plane wall{Vec3::UnitZ(), 0.0};  ///< world z = 0, sensors on the negative side
  std::optional<Plane> floor;  ///< e.g. y = 1 m below the board centre
  BoardSpec board{6, 8, 0.1};
  RigidTransform board_to_world;  ///< board centered on the world origin by default
  RigidTransform camera_to_depth;
  RigidTransform initial_extrinsic;
  CameraIntrinsics rgb;
  CameraIntrinsics depth;
  CameraIntrinsics depth_initial;  ///< the guess handed to calibration
  GroundTruthDistortion truth;
  NoiseModel noise = NoiseModel::kinectQuantization();
  double sigma_corner = 0.2;  ///< pixels
  bool noise_enabled = true;
  double max_range = 8.0;
  std::uint64_t seed = 1;
  std::vector<SensorPose> poses;

  /// Wall-only scene: 320x240 depth, 640x480 RGB, bowl flat within 100 px of the centre
  /// reaching 4 cm at 4 m, bias 0.97 d + 0.008 d^2.
  static SceneSpec defaults();
  /// Recenters the board on the world origin after a board change.
  void centerBoard();
  void validate() const;
};

/// Fills scene.poses: n_train varied poses (1 to 4.5 m, yaw/pitch/roll) keeping every board
/// corner in the RGB image, then n_test fronto-parallel poses at evenly spaced distances.
void planPoses(SceneSpec& scene, int n_train, int n_test);

struct LabeledFrame {
  Frame frame;
  std::vector<PixelLabel> labels;  ///< row-major, depth image layout
  DepthImage true_depth;
  RigidTransform board_pose;  ///< board -> RGB camera
  bool test = false;
  double true_distance = 0.0;
};

LabeledFrame renderFrame(const SceneSpec& scene, std::size_t pose_index);

struct SyntheticDataset {
  SceneSpec scene;
  std::vector<LabeledFrame> frames;  ///< training frames first, then test frames
};

/// Plans poses and renders every frame. Output does not depend on `threads`.
SyntheticDataset generateDataset(SceneSpec scene, int n_train, int n_test, int threads = 1);

}  // namespace depthcal
