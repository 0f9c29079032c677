#include "depthcal/pnp.hpp"

#include <cmath>
#include <vector>

#include <Eigen/SVD>

#include "depthcal/errors.hpp"

namespace depthcal {

Vec2 normalizePixel(const CameraIntrinsics& k, const Vec2& pixel) {
  const Vec2 distorted((pixel.x() - k.cx) / k.fx, (pixel.y() - k.cy) / k.fy);
  if (!k.hasDistortion()) {
    return distorted;
  }
  Vec2 p = distorted;
  for (int iter = 0; iter < 50; ++iter) {
    const double r2 = p.squaredNorm();
    const double radial = 1.0 + r2 * (k.radial[0] + r2 * (k.radial[1] + r2 * k.radial[2]));
    const double dx = 2.0 * k.tangential[0] * p.x() * p.y() +
                      k.tangential[1] * (r2 + 2.0 * p.x() * p.x());
    const double dy = k.tangential[0] * (r2 + 2.0 * p.y() * p.y()) +
                      2.0 * k.tangential[1] * p.x() * p.y();
    const Vec2 next((distorted.x() - dx) / radial, (distorted.y() - dy) / radial);
    const double change = (next - p).norm();
    p = next;
    if (change < 1e-15) {
      break;
    }
  }
  return p;
}

namespace {

// Pose packed as (qw, qx, qy, qz, tx, ty, tz); tangent is (axis-angle, translation).
class ReprojectionProblem final : public LeastSquaresProblem {
 public:
  ReprojectionProblem(std::span<const Vec3> object, std::span<const Vec2> image,
                      const CameraIntrinsics& k)
      : object_(object), image_(image), k_(k), params_{0, 1, 2, 3, 4, 5} {}

  static Eigen::VectorXd pack(const RigidTransform& t) {
    Eigen::VectorXd x(7);
    const auto& q = t.rotation();
    x << q.w(), q.x(), q.y(), q.z(), t.translation().x(), t.translation().y(),
        t.translation().z();
    return x;
  }
  static RigidTransform unpack(const Eigen::VectorXd& x) {
    return {Eigen::Quaterniond(x[0], x[1], x[2], x[3]), Vec3(x[4], x[5], x[6])};
  }

  int parameterCount() const override { return 6; }
  int blockCount() const override { return 1; }
  const std::vector<int>& blockParameters(int) const override { return params_; }

  void evaluateBlock(int, const Eigen::VectorXd& x, Eigen::VectorXd& r) const override {
    const RigidTransform pose = unpack(x);
    r.resize(static_cast<Eigen::Index>(2 * object_.size()));
    for (std::size_t i = 0; i < object_.size(); ++i) {
      const Vec3 pc = pose.apply(object_[i]);
      Vec2 diff;
      if (pc.z() > 1e-9) {
        diff = projectPoint(k_, pc) - image_[i];
      } else {
        diff = Vec2::Constant(1e6);
      }
      r.segment<2>(static_cast<Eigen::Index>(2 * i)) = diff;
    }
  }

  Eigen::VectorXd plus(const Eigen::VectorXd& x, const Eigen::VectorXd& d) const override {
    return pack(unpack(x).plus(d.head<3>(), d.tail<3>()));
  }

  double stepScale(const Eigen::VectorXd& x, int index) const override {
    return index < 3 ? 0.0 : std::abs(x[4 + (index - 3)]);
  }

 private:
  std::span<const Vec3> object_;
  std::span<const Vec2> image_;
  const CameraIntrinsics& k_;
  std::vector<int> params_;
};

Eigen::Matrix3d homographyDlt(const std::vector<Vec2>& src, const std::vector<Vec2>& dst) {
  // Hartley normalization on both sides.
  auto normalizer = [](const std::vector<Vec2>& pts) {
    Vec2 mean = Vec2::Zero();
    for (const auto& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    double spread = 0.0;
    for (const auto& p : pts) spread += (p - mean).norm();
    spread /= static_cast<double>(pts.size());
    const double s = spread > 0.0 ? std::sqrt(2.0) / spread : 1.0;
    Eigen::Matrix3d t;
    t << s, 0, -s * mean.x(), 0, s, -s * mean.y(), 0, 0, 1;
    return t;
  };
  const Eigen::Matrix3d ts = normalizer(src);
  const Eigen::Matrix3d td = normalizer(dst);
  Eigen::MatrixXd a(2 * src.size(), 9);
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Eigen::Vector3d p = ts * src[i].homogeneous();
    const Eigen::Vector3d q = td * dst[i].homogeneous();
    const auto r = static_cast<Eigen::Index>(2 * i);
    a.row(r) << p.x(), p.y(), 1, 0, 0, 0, -q.x() * p.x(), -q.x() * p.y(), -q.x();
    a.row(r + 1) << 0, 0, 0, p.x(), p.y(), 1, -q.y() * p.x(), -q.y() * p.y(), -q.y();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8];
  return td.inverse() * hn * ts;
}

}  // namespace

PnPResult solvePnP(std::span<const Vec3> object_points, std::span<const Vec2> image_points,
                   const CameraIntrinsics& intrinsics, const PnPOptions& options) {
  if (object_points.size() != image_points.size()) {
    throw InvalidArgument("object and image point counts differ");
  }
  if (object_points.size() < 4) {
    throw InvalidArgument("PnP needs at least 4 points");
  }

  // Express the target points in a frame where they lie on z = 0.
  const Plane plane = fitPlane(object_points);
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : object_points) centroid += p;
  centroid /= static_cast<double>(object_points.size());
  Vec3 axis_x = object_points[0] - centroid;
  axis_x -= axis_x.dot(plane.normal) * plane.normal;
  if (axis_x.norm() < 1e-12) {
    axis_x = plane.normal.unitOrthogonal();
  }
  axis_x.normalize();
  const Vec3 axis_y = plane.normal.cross(axis_x);
  Mat3 local_rot;
  local_rot.row(0) = axis_x.transpose();
  local_rot.row(1) = axis_y.transpose();
  local_rot.row(2) = plane.normal.transpose();
  // target -> local
  const RigidTransform to_local(Eigen::Quaterniond(local_rot), -(local_rot * centroid));

  std::vector<Vec2> planar;
  std::vector<Vec2> normalized;
  planar.reserve(object_points.size());
  normalized.reserve(object_points.size());
  for (std::size_t i = 0; i < object_points.size(); ++i) {
    planar.push_back(to_local.apply(object_points[i]).head<2>());
    normalized.push_back(normalizePixel(intrinsics, image_points[i]));
  }

  // H ~ [r1 r2 t] maps local plane coordinates to normalized image coordinates.
  Eigen::Matrix3d h = homographyDlt(planar, normalized);
  const double scale = 2.0 / (h.col(0).norm() + h.col(1).norm());
  h *= scale;
  if (h(2, 2) < 0.0) {
    h = -h;  // target in front of the camera
  }
  Mat3 approx;
  approx.col(0) = h.col(0);
  approx.col(1) = h.col(1);
  approx.col(2) = h.col(0).cross(h.col(1));
  Eigen::JacobiSVD<Mat3> svd(approx, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 rot = svd.matrixU() * svd.matrixV().transpose();
  if (rot.determinant() < 0.0) {
    Mat3 fix = Mat3::Identity();
    fix(2, 2) = -1.0;
    rot = svd.matrixU() * fix * svd.matrixV().transpose();
  }
  const RigidTransform local_to_camera(Eigen::Quaterniond(rot), h.col(2));
  const RigidTransform initial = local_to_camera * to_local;

  const ReprojectionProblem problem(object_points, image_points, intrinsics);
  const LmResult lm = lmMinimize(problem, ReprojectionProblem::pack(initial), options.lm);

  PnPResult result;
  result.pose = ReprojectionProblem::unpack(lm.x);
  result.rms_px = std::sqrt(lm.final_cost / static_cast<double>(object_points.size()));
  result.iterations = lm.iterations;
  if (!std::isfinite(result.rms_px) || result.rms_px > options.max_rms_px) {
    throw ConvergenceError("PnP did not converge (RMS " + std::to_string(result.rms_px) +
                           " px)");
  }
  return result;
}

}  // namespace depthcal
