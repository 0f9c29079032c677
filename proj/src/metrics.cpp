#include "depthcal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "depthcal/errors.hpp"

namespace depthcal {

namespace {

std::vector<Vec3> gather(const OrganizedCloud& cloud, const IndexSet& inliers) {
  std::vector<Vec3> pts;
  pts.reserve(inliers.size());
  for (const Pixel& px : inliers) {
    if (px.u < 0 || px.v < 0 || px.u >= cloud.width || px.v >= cloud.height) {
      throw InvalidArgument("inlier outside the cloud");
    }
    if (const auto& p = cloud.at(px.u, px.v)) pts.push_back(*p);
  }
  return pts;
}

}  // namespace

double planarityError(const OrganizedCloud& cloud, const IndexSet& inliers) {
  const std::vector<Vec3> pts = gather(cloud, inliers);
  const Plane plane = fitPlane(pts);
  double sum = 0.0;
  for (const Vec3& p : pts) {
    const double d = plane.signedDistance(p);
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(pts.size()));
}

double globalError(const OrganizedCloud& cloud, const IndexSet& inliers, const Plane& reference) {
  const std::vector<Vec3> pts = gather(cloud, inliers);
  if (pts.empty()) {
    throw InvalidArgument("global error needs at least one inlier");
  }
  double sum = 0.0;
  for (const Vec3& p : pts) sum += reference.signedDistance(p);
  return sum / static_cast<double>(pts.size());
}

double rotationErrorDeg(const Vec3& normal, const Vec3& axis) {
  if (std::abs(normal.norm() - 1.0) > 1e-9 || std::abs(axis.norm() - 1.0) > 1e-9) {
    throw InvalidArgument("rotation error needs unit vectors");
  }
  const double c = std::clamp(normal.dot(axis), -1.0, 1.0);
  return (std::acos(c) - M_PI / 2.0) * 180.0 / M_PI;
}

double depthVsGroundTruth(const OrganizedCloud& cloud, const IndexSet& inliers,
                          double true_distance) {
  const std::vector<Vec3> pts = gather(cloud, inliers);
  if (pts.empty()) {
    throw InvalidArgument("depth comparison needs at least one inlier");
  }
  double sum = 0.0;
  for (const Vec3& p : pts) sum += p.z();
  return sum / static_cast<double>(pts.size()) - true_distance;
}

}  // namespace depthcal
