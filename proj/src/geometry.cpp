#include "depthcal/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "depthcal/errors.hpp"

namespace depthcal {

Plane Plane::fromNormalOffset(const Vec3& normal, double offset) {
  const double norm = normal.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw DegenerateInput("plane normal must be a finite non-zero vector");
  }
  Plane plane{normal / norm, offset / norm};
  if (plane.offset < 0.0) {
    plane.normal = -plane.normal;
    plane.offset = -plane.offset;
  }
  return plane;
}

RigidTransform::RigidTransform(const Eigen::Quaterniond& rotation, const Vec3& translation)
    : rotation_(rotation.normalized()), translation_(translation) {}

RigidTransform RigidTransform::fromUnitQuaternion(const Eigen::Quaterniond& rotation,
                                                 const Vec3& translation) {
  if (!(std::abs(rotation.norm() - 1.0) <= 1e-9)) {
    throw InvalidArgument("quaternion is not unit length");
  }
  RigidTransform t;
  t.rotation_ = rotation;
  t.translation_ = translation;
  return t;
}

RigidTransform RigidTransform::fromAxisAngle(const Vec3& axis_angle, const Vec3& translation) {
  const double angle = axis_angle.norm();
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();
  if (angle > 0.0) {
    q = Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis_angle / angle));
  }
  return {q, translation};
}

Vec3 RigidTransform::axisAngle() const {
  Eigen::AngleAxisd aa(rotation_);
  double angle = aa.angle();
  Vec3 axis = aa.axis();
  if (angle > M_PI) {
    angle = 2.0 * M_PI - angle;
    axis = -axis;
  }
  return axis * angle;
}

RigidTransform RigidTransform::operator*(const RigidTransform& rhs) const {
  return {rotation_ * rhs.rotation_, rotation_ * rhs.translation_ + translation_};
}

RigidTransform RigidTransform::inverse() const {
  const Eigen::Quaterniond inv = rotation_.conjugate();
  return {inv, -(inv * translation_)};
}

RigidTransform RigidTransform::plus(const Vec3& delta_rot, const Vec3& delta_t) const {
  const RigidTransform step = fromAxisAngle(delta_rot, Vec3::Zero());
  return {step.rotation_ * rotation_, translation_ + delta_t};
}

double rotationAngleBetween(const RigidTransform& a, const RigidTransform& b) {
  const Eigen::Quaterniond rel = a.rotation().conjugate() * b.rotation();
  const double w = std::min(1.0, std::abs(rel.w()));
  const double s = rel.vec().norm();
  return 2.0 * std::atan2(s, w);
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw InvalidArgument("focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw InvalidArgument("image size must be positive");
  }
  if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height) {
    throw InvalidArgument("principal point outside the image");
  }
}

bool CameraIntrinsics::hasDistortion() const {
  return std::any_of(radial.begin(), radial.end(), [](double k) { return k != 0.0; }) ||
         std::any_of(tangential.begin(), tangential.end(), [](double p) { return p != 0.0; });
}

DepthImage::DepthImage(int w, int h, double fill)
    : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {
  if (w <= 0 || h <= 0) {
    throw InvalidArgument("depth image dimensions must be positive");
  }
}

void DepthImage::validate() const {
  if (data.size() != static_cast<std::size_t>(width) * height) {
    throw InvalidArgument("depth image data size does not match its dimensions");
  }
  for (double d : data) {
    if (!std::isfinite(d) || d < 0.0) {
      throw InvalidArgument("depth values must be finite and non-negative");
    }
  }
}

std::size_t OrganizedCloud::validCount() const {
  return static_cast<std::size_t>(
      std::count_if(points.begin(), points.end(), [](const auto& p) { return p.has_value(); }));
}

void validateIndexSet(const IndexSet& set, int width, int height) {
  std::unordered_set<long long> seen;
  seen.reserve(set.size());
  for (const Pixel& px : set) {
    if (px.u < 0 || px.v < 0 || px.u >= width || px.v >= height) {
      throw InvalidArgument("index set pixel (" + std::to_string(px.u) + ", " +
                            std::to_string(px.v) + ") outside the image");
    }
    if (!seen.insert(static_cast<long long>(px.v) * width + px.u).second) {
      throw InvalidArgument("duplicate pixel in index set");
    }
  }
}

NoiseModel NoiseModel::kinectQuantization() { return {{-0.00029, 0.00037, 0.001365}}; }

double NoiseModel::sigma(double z) const {
  double acc = 0.0;
  for (auto it = coefficients.rbegin(); it != coefficients.rend(); ++it) {
    acc = acc * z + *it;
  }
  return acc;
}

double sigmaQuantization(const NoiseModel& model, double z) { return model.sigma(z); }

OrganizedCloud depthToCloud(const DepthImage& image, const CameraIntrinsics& intrinsics) {
  if (image.width != intrinsics.width || image.height != intrinsics.height) {
    throw InvalidArgument("depth image and intrinsics dimensions differ");
  }
  OrganizedCloud cloud(image.width, image.height);
  for (int v = 0; v < image.height; ++v) {
    for (int u = 0; u < image.width; ++u) {
      const double d = image.at(u, v);
      if (d > 0.0) {
        cloud.at(u, v) = Vec3(d * (u - intrinsics.cx) / intrinsics.fx,
                              d * (v - intrinsics.cy) / intrinsics.fy, d);
      }
    }
  }
  return cloud;
}

Vec2 projectPoint(const CameraIntrinsics& k, const Vec3& p) {
  if (!(p.z() > 0.0)) {
    throw InvalidArgument("cannot project a point with non-positive depth");
  }
  const double x = p.x() / p.z();
  const double y = p.y() / p.z();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + r2 * (k.radial[0] + r2 * (k.radial[1] + r2 * k.radial[2]));
  const double p1 = k.tangential[0];
  const double p2 = k.tangential[1];
  const double xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
  const double yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
  return {k.fx * xd + k.cx, k.fy * yd + k.cy};
}

Plane fitPlane(std::span<const Vec3> points, std::span<const double> weights) {
  if (points.size() < 3) {
    throw InvalidArgument("plane fit needs at least 3 points");
  }
  if (!weights.empty() && weights.size() != points.size()) {
    throw InvalidArgument("weight count does not match point count");
  }
  auto weight = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };

  double total = 0.0;
  Vec3 centroid = Vec3::Zero();
  for (std::size_t i = 0; i < points.size(); ++i) {
    centroid += weight(i) * points[i];
    total += weight(i);
  }
  if (!(total > 0.0)) {
    throw InvalidArgument("plane fit weights must have a positive sum");
  }
  centroid /= total;

  Mat3 scatter = Mat3::Zero();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 c = points[i] - centroid;
    scatter.noalias() += weight(i) * c * c.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter);
  const Vec3 values = eig.eigenvalues();
  if (!(values(2) > 0.0) || values(1) <= 1e-12 * values(2)) {
    throw DegenerateInput("plane fit input is collinear");
  }
  const Vec3 normal = eig.eigenvectors().col(0);
  return Plane::fromNormalOffset(normal, normal.dot(centroid));
}

Vec3 losProject(const Vec3& p, const Plane& plane) {
  const double denom = plane.normal.dot(p);
  if (std::abs(denom) < 1e-12) {
    throw DegenerateInput("line of sight is parallel to the plane");
  }
  return p * (plane.offset / denom);
}

Vec3 orthProject(const Vec3& p, const Plane& plane) {
  return p - plane.signedDistance(p) * plane.normal;
}

Plane transformPlane(const RigidTransform& t, const Plane& plane) {
  const Vec3 normal = t.rotation() * plane.normal;
  return Plane::fromNormalOffset(normal, plane.offset + normal.dot(t.translation()));
}

RigidTransform estimateTransformFromPlanes(std::span<const Plane> planes_a,
                                           std::span<const Plane> planes_b) {
  if (planes_a.size() != planes_b.size()) {
    throw InvalidArgument("plane sets differ in size");
  }
  if (planes_a.size() < 3) {
    throw InvalidArgument("at least 3 plane correspondences are required");
  }
  const auto n = static_cast<Eigen::Index>(planes_a.size());
  Eigen::MatrixX3d normals_a(n, 3);
  Eigen::MatrixX3d normals_b(n, 3);
  Eigen::VectorXd rhs(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    normals_a.row(i) = planes_a[i].normal.transpose();
    normals_b.row(i) = planes_b[i].normal.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixX3d> span_check(normals_a);
  if (span_check.singularValues()(2) <= 1e-6) {
    throw DegenerateInput("plane normals do not span 3D");
  }

  const Mat3 h = normals_b.transpose() * normals_a;
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 fix = Mat3::Identity();
  fix(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  const Mat3 rotation = svd.matrixU() * fix * svd.matrixV().transpose();

  // Rotating a plane leaves its offset unchanged, so n_b^T t = d_b - d_a.
  for (Eigen::Index i = 0; i < n; ++i) {
    rhs(i) = planes_b[i].offset - planes_a[i].offset;
  }
  const Vec3 translation = normals_b.colPivHouseholderQr().solve(rhs);
  return {Eigen::Quaterniond(rotation), translation};
}

}  // namespace depthcal
