#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace depthcal {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Plane n^T x - offset = 0 with a unit normal. Canonical form keeps offset >= 0.
struct Plane {
  Vec3 normal{0.0, 0.0, 1.0};
  double offset = 0.0;

  /// Normalizes `normal` and flips the sign of both terms when the offset is negative.
  static Plane fromNormalOffset(const Vec3& normal, double offset);

  double signedDistance(const Vec3& p) const { return normal.dot(p) - offset; }
};

/// Rigid motion x -> R x + t, rotation stored as a unit quaternion.
class RigidTransform {
 public:
  RigidTransform() = default;
  RigidTransform(const Eigen::Quaterniond& rotation, const Vec3& translation);

  static RigidTransform identity() { return {}; }
  /// Keeps the quaternion bit-for-bit; throws InvalidArgument unless it is unit within 1e-9.
  static RigidTransform fromUnitQuaternion(const Eigen::Quaterniond& rotation,
                                           const Vec3& translation);
  /// Rotation given as an axis-angle vector (direction = axis, norm = angle in radians).
  static RigidTransform fromAxisAngle(const Vec3& axis_angle, const Vec3& translation);

  const Eigen::Quaterniond& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }
  Mat3 rotationMatrix() const { return rotation_.toRotationMatrix(); }
  Vec3 axisAngle() const;

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
  Vec3 operator*(const Vec3& p) const { return apply(p); }
  RigidTransform operator*(const RigidTransform& rhs) const;
  RigidTransform inverse() const;

  /// Local update: rotation <- exp(delta_rot) * rotation, translation <- translation + delta_t.
  RigidTransform plus(const Vec3& delta_rot, const Vec3& delta_t) const;

 private:
  Eigen::Quaterniond rotation_ = Eigen::Quaterniond::Identity();
  Vec3 translation_ = Vec3::Zero();
};

/// Angle of the relative rotation between two transforms, radians.
double rotationAngleBetween(const RigidTransform& a, const RigidTransform& b);

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  std::array<double, 3> radial{0.0, 0.0, 0.0};
  std::array<double, 2> tangential{0.0, 0.0};
  int width = 0;
  int height = 0;

  /// Throws InvalidArgument unless fx, fy > 0 and the principal point lies in the image.
  void validate() const;
  bool hasDistortion() const;
};

/// Row-major depth grid in meters. 0 marks an invalid measurement.
struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  DepthImage() = default;
  DepthImage(int w, int h, double fill = 0.0);

  double& at(int u, int v) { return data[static_cast<std::size_t>(v) * width + u]; }
  double at(int u, int v) const { return data[static_cast<std::size_t>(v) * width + u]; }
  void validate() const;
};

/// Point grid preserving the depth image layout; absent entries mark invalid pixels.
struct OrganizedCloud {
  int width = 0;
  int height = 0;
  std::vector<std::optional<Vec3>> points;

  OrganizedCloud() = default;
  OrganizedCloud(int w, int h) : width(w), height(h), points(static_cast<std::size_t>(w) * h) {}

  std::optional<Vec3>& at(int u, int v) { return points[static_cast<std::size_t>(v) * width + u]; }
  const std::optional<Vec3>& at(int u, int v) const {
    return points[static_cast<std::size_t>(v) * width + u];
  }
  std::size_t validCount() const;
};

struct Pixel {
  int u = 0;
  int v = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// Pixel coordinates without duplicates, all inside the image they refer to.
using IndexSet = std::vector<Pixel>;

/// Throws InvalidArgument on out-of-bounds or duplicate pixels.
void validateIndexSet(const IndexSet& set, int width, int height);

/// Depth noise standard deviation as a polynomial of depth (meters -> meters).
struct NoiseModel {
  std::vector<double> coefficients;

  /// Structured-light quantization error: -0.00029 + 0.00037 z + 0.001365 z^2.
  static NoiseModel kinectQuantization();
  double sigma(double z) const;
};

double sigmaQuantization(const NoiseModel& model, double z);

/// Back-projects every valid depth through the ideal pinhole model.
OrganizedCloud depthToCloud(const DepthImage& image, const CameraIntrinsics& intrinsics);

/// Unit-depth ray through pixel (u, v) of an ideal pinhole camera.
inline Vec3 pixelRay(const CameraIntrinsics& k, double u, double v) {
  return {(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0};
}

/// Pinhole projection with radial (k1, k2, k3) and tangential (p1, p2) distortion.
Vec2 projectPoint(const CameraIntrinsics& intrinsics, const Vec3& p);

/// Total-least-squares plane through the (optionally weighted) points.
Plane fitPlane(std::span<const Vec3> points, std::span<const double> weights = {});

/// Scales p along its line of sight until it meets the plane.
Vec3 losProject(const Vec3& p, const Plane& plane);

/// Foot of the perpendicular from p onto the plane.
Vec3 orthProject(const Vec3& p, const Plane& plane);

/// Plane expressed in the target frame of `t`.
Plane transformPlane(const RigidTransform& t, const Plane& plane);

/// Rigid transform T with transformPlane(T, planes_a[i]) ~ planes_b[i].
RigidTransform estimateTransformFromPlanes(std::span<const Plane> planes_a,
                                           std::span<const Plane> planes_b);

}  // namespace depthcal
