#pragma once

#include "depthcal/geometry.hpp"

namespace depthcal {

/// RMS distance of the inlier points to their own least-squares plane.
double planarityError(const OrganizedCloud& cloud, const IndexSet& inliers);

/// Mean signed distance of the inlier points to a reference plane (positive = behind it).
double globalError(const OrganizedCloud& cloud, const IndexSet& inliers, const Plane& reference);

/// arccos(n^T a) - 90 degrees, for unit vectors n and a.
double rotationErrorDeg(const Vec3& normal, const Vec3& axis);

/// Mean inlier depth minus the externally measured wall distance.
double depthVsGroundTruth(const OrganizedCloud& cloud, const IndexSet& inliers,
                          double true_distance);

}  // namespace depthcal
