#pragma once

#include <span>
#include <string>
#include <vector>

#include "depthcal/calib_undistort.hpp"
#include "depthcal/geometry.hpp"
#include "depthcal/lm.hpp"
#include "depthcal/maps.hpp"

namespace depthcal {

struct GlobalConfig {
  double sigma_corner = 0.2;  ///< corner detection std, pixels
  /// Depth std after undistortion, used to weight plane residuals.
  NoiseModel sigma_undistorted = NoiseModel::kinectQuantization();
  LmOptions lm{.max_iter = 100, .ftol = 1e-10, .xtol = 1e-12, .gtol = 1e-10,
               .damping_init = 1e-3, .threads = 1, .on_accept = {}};
  int degree = 2;
  /// Use every n-th inlier row/column in the plane residuals (1 = all).
  int pixel_stride = 1;
  bool refine_intrinsics = true;
  bool refine_global_map = true;
  /// After the plane-based initialization, fit extrinsic and map jointly to the wall points.
  bool init_joint = true;
  /// Use every n-th inlier row/column in that joint fit.
  int init_stride = 4;

  void validate() const;
};

/// Stage-two input for one frame: board corners, the depth image after the undistortion
/// map, and the wall inliers found in stage one.
struct FrameObservation {
  std::string id;
  CornerGrid corners;
  DepthImage undistorted;
  IndexSet inliers;
};

/// Everything the joint refinement estimates.
struct RefinementState {
  RigidTransform camera_to_depth;
  std::vector<RigidTransform> board_poses;  ///< board -> RGB camera, one per frame
  CameraIntrinsics depth_intrinsics;
  GlobalMap global_map;
};

struct GlobalInit {
  RefinementState state;
  std::vector<std::size_t> used;  ///< indices of the observations kept
  std::vector<Plane> camera_planes;
  std::vector<Plane> depth_planes;
  std::vector<std::string> warnings;
};

/// Initial extrinsic, board poses and global map from board/wall plane pairs.
GlobalInit initGlobal(std::span<const FrameObservation> frames, const CameraIntrinsics& rgb,
                      const CameraIntrinsics& depth, const BoardSpec& board,
                      const GlobalConfig& cfg);

/// Corner reprojection residuals divided by sigma_corner, two per corner.
Eigen::VectorXd residualRepr(const CornerGrid& corners, const RigidTransform& board_pose,
                             const CameraIntrinsics& rgb, const BoardSpec& board,
                             double sigma_corner);

/// Signed distances of the globally corrected wall points to the board plane in the depth
/// frame, each scaled by 1 / (sqrt(|inliers|) sigma_U(z)). Their squared sum is e_pos.
Eigen::VectorXd residualPos(const FrameObservation& frame, const RefinementState& state,
                            std::size_t frame_index, const BoardSpec& board,
                            const GlobalConfig& cfg);

/// Joint problem over (extrinsic, depth intrinsics, free global-map coefficients,
/// board poses) with one residual block per frame.
class RefinementProblem final : public LeastSquaresProblem {
 public:
  /// `depth` supplies the image size and the fixed lens terms of the depth camera.
  RefinementProblem(std::span<const FrameObservation> frames, const CameraIntrinsics& rgb,
                    const CameraIntrinsics& depth, const BoardSpec& board,
                    const GlobalConfig& cfg);

  int parameterCount() const override { return tangent_size_; }
  int blockCount() const override { return static_cast<int>(frames_.size()); }
  const std::vector<int>& blockParameters(int block) const override {
    return block_params_[static_cast<std::size_t>(block)];
  }
  void evaluateBlock(int block, const Eigen::VectorXd& x,
                     Eigen::VectorXd& residuals) const override;
  Eigen::VectorXd plus(const Eigen::VectorXd& x, const Eigen::VectorXd& delta) const override;
  double stepScale(const Eigen::VectorXd& x, int index) const override;

  Eigen::VectorXd pack(const RefinementState& state) const;
  RefinementState unpack(const Eigen::VectorXd& x) const;

 private:
  struct Sample {
    int u;
    int v;
    double z;
    double weight;
  };

  std::span<const FrameObservation> frames_;
  CameraIntrinsics rgb_;
  BoardSpec board_;
  GlobalConfig cfg_;
  CameraIntrinsics depth_template_;
  int width_;
  int height_;
  int degree_;
  int tangent_size_;
  std::vector<std::vector<int>> block_params_;
  std::vector<std::vector<Sample>> samples_;
  std::vector<Vec3> board_points_;

  int globalOffsetTangent() const { return 10; }
  int poseOffsetTangent(std::size_t k) const {
    return 10 + 3 * degree_ + 6 * static_cast<int>(k);
  }
  int poseOffsetAmbient(std::size_t k) const {
    return 11 + 3 * degree_ + 7 * static_cast<int>(k);
  }
};

struct RefineResult {
  RefinementState state;
  LmResult lm;
};

RefineResult refine(const RefinementState& initial, std::span<const FrameObservation> frames,
                    const CameraIntrinsics& rgb, const BoardSpec& board, const GlobalConfig& cfg);

}  // namespace depthcal
