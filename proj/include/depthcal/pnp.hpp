#pragma once

#include <span>

#include "depthcal/geometry.hpp"
#include "depthcal/lm.hpp"

namespace depthcal {

struct PnPResult {
  /// Maps target (board) coordinates into the camera frame.
  RigidTransform pose;
  double rms_px = 0.0;
  int iterations = 0;
};

struct PnPOptions {
  LmOptions lm{};
  /// RMS reprojection error above which the solve is reported as failed.
  double max_rms_px = 5.0;
};

/// Pose of a planar target from >= 4 point correspondences. Initialized from the
/// plane-to-image homography and refined by Levenberg-Marquardt on reprojection error.
PnPResult solvePnP(std::span<const Vec3> object_points, std::span<const Vec2> image_points,
                   const CameraIntrinsics& intrinsics, const PnPOptions& options = {});

/// Inverse of the lens model: pixel -> normalized image coordinates (x/z, y/z).
Vec2 normalizePixel(const CameraIntrinsics& intrinsics, const Vec2& pixel);

}  // namespace depthcal
