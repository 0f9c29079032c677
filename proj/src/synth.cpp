#include "depthcal/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

#include "depthcal/errors.hpp"
#include "depthcal/parallel.hpp"

namespace depthcal {

namespace {

constexpr double kDeg = M_PI / 180.0;

// Coefficients of a bilinear blend of polynomials, lowest order first.
using Coeffs = std::array<double, PolyFn::kMaxDegree + 1>;

void accumulate(Coeffs& acc, const PolyFn& f, double w) {
  for (int i = 0; i <= f.degree(); ++i) acc[static_cast<std::size_t>(i)] += w * f.coefficient(i);
}

Coeffs fieldAt(const UndistortionMap& map, int u, int v) {
  Coeffs c{};
  for (const ControlWeight& cw : map.surrounding(u, v)) {
    accumulate(c, map.control(cw.col, cw.row), cw.weight);
  }
  return c;
}

Coeffs biasAt(const GlobalMap& g, int u, int v) {
  const double ax = static_cast<double>(u) / g.width();
  const double ay = static_cast<double>(v) / g.height();
  Coeffs c{};
  accumulate(c, g.corner00(), (1.0 - ax) * (1.0 - ay));
  accumulate(c, g.cornerW0(), ax * (1.0 - ay));
  accumulate(c, g.corner0H(), (1.0 - ax) * ay);
  accumulate(c, g.cornerWH(), ax * ay);
  return c;
}

// Value and first derivative.
std::pair<double, double> evalWithSlope(const Coeffs& c, double z) {
  double f = 0.0;
  double df = 0.0;
  for (int i = PolyFn::kMaxDegree; i >= 0; --i) {
    df = df * z + f;
    f = f * z + c[static_cast<std::size_t>(i)];
  }
  return {f, df};
}

RigidTransform fromMatrix(const Mat3& r, const Vec3& t) {
  return RigidTransform(Eigen::Quaterniond(r).normalized(), t);
}

bool insideImage(const Vec2& p, const CameraIntrinsics& k, double margin) {
  return p.x() >= margin && p.y() >= margin && p.x() <= k.width - 1 - margin &&
         p.y() <= k.height - 1 - margin;
}

bool boardVisible(const SceneSpec& scene, const RigidTransform& depth_to_world) {
  const RigidTransform world_to_depth = depth_to_world.inverse();
  const RigidTransform world_to_rgb = (depth_to_world * scene.camera_to_depth).inverse();
  for (const Vec3& b : scene.board.points()) {
    const Vec3 pw = scene.board_to_world * b;
    const Vec3 pc = world_to_rgb * pw;
    const Vec3 pd = world_to_depth * pw;
    if (pc.z() <= 0.1 || pd.z() <= 0.1) return false;
    if (!insideImage(projectPoint(scene.rgb, pc), scene.rgb, 10.0)) return false;
    if (!insideImage(projectPoint(scene.depth, pd), scene.depth, 4.0)) return false;
  }
  return true;
}

}  // namespace

GroundTruthDistortion GroundTruthDistortion::none(int width, int height, int bin) {
  GroundTruthDistortion g;
  g.field = UndistortionMap(width, height, bin, bin, 2);
  g.bias = GlobalMap(width, height, 2);
  g.description = "none";
  return g;
}

GroundTruthDistortion GroundTruthDistortion::bowl(const CameraIntrinsics& intrinsics, double rms,
                                                  double depth, double tilt_ratio, double plateau,
                                                  int bin) {
  intrinsics.validate();
  if (rms < 0.0 || depth <= 0.0) {
    throw InvalidArgument("bowl distortion needs rms >= 0 and depth > 0");
  }
  const double hw = intrinsics.width / 2.0;
  const double hh = intrinsics.height / 2.0;
  const double rim = std::hypot(hw, hh);
  if (plateau < 0.0 || plateau >= rim) {
    throw InvalidArgument("bowl plateau must lie inside the image");
  }
  auto shape = [&](double u, double v) {
    const double du = u - intrinsics.cx;
    const double dv = v - intrinsics.cy;
    const double r = std::max(0.0, std::hypot(du, dv) - plateau) / (rim - plateau);
    return r * r + tilt_ratio * du / hw;
  };
  auto build = [&](double amplitude) {
    GroundTruthDistortion g = none(intrinsics.width, intrinsics.height, bin);
    for (int r = 0; r < g.field.rows(); ++r) {
      for (int c = 0; c < g.field.cols(); ++c) {
        const double k = amplitude * shape(c * bin, r * bin);
        g.field.setControl(c, r, PolyFn{0.0, 1.0, -k});
      }
    }
    return g;
  };
  // Planarity error is almost linear in the amplitude, so a few rescalings converge.
  double amplitude = 1e-3;
  GroundTruthDistortion g = build(amplitude);
  if (rms == 0.0) {
    g = build(0.0);
  } else {
    for (int it = 0; it < 8; ++it) {
      const double current = injectedPlanarityRms(g, intrinsics, depth);
      if (current <= 0.0) break;
      amplitude *= rms / current;
      g = build(amplitude);
    }
  }
  g.description = "bowl rms=" + std::to_string(rms) + " depth=" + std::to_string(depth) +
                  " tilt=" + std::to_string(tilt_ratio) + " plateau=" + std::to_string(plateau) +
                  " amplitude=" + std::to_string(amplitude);
  g.validate();
  return g;
}

void GroundTruthDistortion::setBias(double c1, double c2) {
  const PolyFn b{{0.0, c1, c2}, true};
  bias = GlobalMap(field.width(), field.height(), b, b, b);
}

double GroundTruthDistortion::correct(int u, int v, double observed) const {
  if (observed <= 0.0) return 0.0;
  return bias.evaluate(u, v, field.undistortDepth(u, v, observed));
}

double GroundTruthDistortion::observe(int u, int v, double true_depth) const {
  if (true_depth <= 0.0) return 0.0;
  const Coeffs f = fieldAt(field, u, v);
  const Coeffs b = biasAt(bias, u, v);
  double o = true_depth;
  for (int it = 0; it < 60; ++it) {
    const auto [fu, dfu] = evalWithSlope(f, o);
    const auto [gb, dgb] = evalWithSlope(b, fu);
    const double slope = dgb * dfu;
    if (!(slope > 0.0)) return 0.0;
    const double step = (gb - true_depth) / slope;
    o -= step;
    if (o <= 0.0) return 0.0;
    if (std::abs(step) <= 1e-15 * o) break;
  }
  return o;
}

void GroundTruthDistortion::validate(double lo, double hi) const {
  if (field.width() <= 0 || bias.width() != field.width() || bias.height() != field.height()) {
    throw InvalidArgument("distortion field and bias dimensions differ");
  }
  for (int r = 0; r < field.rows(); ++r) {
    for (int c = 0; c < field.cols(); ++c) {
      const int u = std::min(c * field.binX(), field.width() - 1);
      const int v = std::min(r * field.binY(), field.height() - 1);
      const Coeffs f = fieldAt(field, u, v);
      const Coeffs b = biasAt(bias, u, v);
      for (int i = 0; i <= 20; ++i) {
        const double z = lo + (hi - lo) * i / 20.0;
        const auto [fu, dfu] = evalWithSlope(f, z);
        const auto [gb, dgb] = evalWithSlope(b, fu);
        (void)gb;
        if (!(dfu > 0.0) || !(dgb > 0.0)) {
          throw InvalidArgument("distortion is not monotone in depth on the working range");
        }
      }
    }
  }
}

double injectedPlanarityRms(const GroundTruthDistortion& truth, const CameraIntrinsics& intrinsics,
                            double depth) {
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(intrinsics.width) * intrinsics.height);
  for (int v = 0; v < intrinsics.height; ++v) {
    for (int u = 0; u < intrinsics.width; ++u) {
      const double o = truth.observe(u, v, depth);
      if (o > 0.0) pts.push_back(pixelRay(intrinsics, u, v) * o);
    }
  }
  const Plane plane = fitPlane(pts);
  double sum = 0.0;
  for (const Vec3& p : pts) {
    const double d = plane.signedDistance(p);
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(pts.size()));
}

SceneSpec SceneSpec::defaults() {
  SceneSpec s;
  s.rgb.fx = 525.0;
  s.rgb.fy = 525.0;
  s.rgb.cx = 319.5;
  s.rgb.cy = 239.5;
  s.rgb.radial = {0.03, -0.06, 0.0};
  s.rgb.tangential = {0.0005, -0.0003};
  s.rgb.width = 640;
  s.rgb.height = 480;

  s.depth.fx = 285.0;
  s.depth.fy = 285.0;
  s.depth.cx = 159.5;
  s.depth.cy = 119.5;
  s.depth.width = 320;
  s.depth.height = 240;
  s.depth_initial = s.depth;

  s.camera_to_depth = RigidTransform::fromAxisAngle(
      Vec3(1.0, -2.0, 0.5).normalized() * (0.8 * kDeg), Vec3(0.025, 0.004, -0.006));
  s.initial_extrinsic = RigidTransform(Eigen::Quaterniond::Identity(), Vec3(0.025, 0.0, 0.0));

  s.truth = GroundTruthDistortion::bowl(s.depth, 0.04, 4.0, 0.0, 100.0);
  s.truth.setBias(0.97, 0.008);
  s.centerBoard();
  return s;
}

void SceneSpec::centerBoard() {
  board_to_world = RigidTransform(
      Eigen::Quaterniond::Identity(),
      Vec3(-(board.cols - 1) * board.square / 2.0, -(board.rows - 1) * board.square / 2.0, 0.0));
}

void SceneSpec::validate() const {
  board.validate();
  rgb.validate();
  depth.validate();
  depth_initial.validate();
  if (depth_initial.width != depth.width || depth_initial.height != depth.height) {
    throw InvalidArgument("initial depth intrinsics must match the depth image size");
  }
  if (truth.field.width() != depth.width || truth.field.height() != depth.height) {
    throw InvalidArgument("distortion field size must match the depth image");
  }
  truth.validate();
  if (sigma_corner < 0.0 || max_range <= 0.0) {
    throw InvalidArgument("corner noise must be >= 0 and range > 0");
  }
  for (const Vec3& b : board.points()) {
    if (std::abs(wall.signedDistance(board_to_world * b)) > 1e-9) {
      throw InvalidArgument("board does not lie on the wall");
    }
  }
}

void planPoses(SceneSpec& scene, int n_train, int n_test) {
  if (n_train < 10) {
    throw InvalidArgument("at least 10 training frames are required");
  }
  if (n_test < 0) {
    throw InvalidArgument("test frame count must be >= 0");
  }
  scene.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(scene.seed),
                    static_cast<std::uint32_t>(scene.seed >> 32), 0x504f5345u};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  scene.poses.clear();
  for (int i = 0; i < n_train; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
      const double distance = 1.0 + 3.5 * (i + unit(rng)) / n_train;
      const Mat3 r = (Eigen::AngleAxisd(uniform(-30.0, 30.0) * kDeg, Vec3::UnitY()) *
                      Eigen::AngleAxisd(uniform(-20.0, 20.0) * kDeg, Vec3::UnitX()) *
                      Eigen::AngleAxisd(uniform(-10.0, 10.0) * kDeg, Vec3::UnitZ()))
                         .toRotationMatrix();
      const Vec3 aim(uniform(-0.3, 0.3), uniform(-0.2, 0.2), 0.0);
      const Vec3 axis = r.col(2);
      const RigidTransform pose = fromMatrix(r, aim - distance * axis);
      if (boardVisible(scene, pose)) {
        scene.poses.push_back({pose, false, distance});
        placed = true;
      }
    }
    if (!placed) {
      throw InvalidArgument("could not place a training pose that sees the whole board");
    }
  }
  for (int i = 0; i < n_test; ++i) {
    const double distance = n_test == 1 ? 2.5 : 1.0 + 3.5 * i / (n_test - 1);
    const RigidTransform pose(Eigen::Quaterniond::Identity(), Vec3(0.0, 0.0, -distance));
    if (!boardVisible(scene, pose)) {
      throw InvalidArgument("test pose does not see the whole board");
    }
    scene.poses.push_back({pose, true, distance});
  }
}

LabeledFrame renderFrame(const SceneSpec& scene, std::size_t pose_index) {
  if (pose_index >= scene.poses.size()) {
    throw InvalidArgument("pose index out of range");
  }
  const SensorPose& pose = scene.poses[pose_index];
  const CameraIntrinsics& k = scene.depth;
  std::seed_seq seq{static_cast<std::uint32_t>(scene.seed),
                    static_cast<std::uint32_t>(scene.seed >> 32),
                    static_cast<std::uint32_t>(pose_index)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> gauss(0.0, 1.0);

  LabeledFrame out;
  out.test = pose.test;
  out.true_distance = pose.true_distance;
  char id[32];
  std::snprintf(id, sizeof id, "%s_%03zu", pose.test ? "test" : "train", pose_index);
  out.frame.id = id;
  out.frame.depth = DepthImage(k.width, k.height);
  out.true_depth = DepthImage(k.width, k.height);
  out.labels.assign(static_cast<std::size_t>(k.width) * k.height, PixelLabel::none);

  const Mat3 r = pose.depth_to_world.rotationMatrix();
  const Vec3 origin = pose.depth_to_world.translation();
  std::size_t wall_pixels = 0;
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const Vec3 dir = r * pixelRay(k, u, v);
      double best = std::numeric_limits<double>::infinity();
      PixelLabel label = PixelLabel::none;
      auto hit = [&](const Plane& p, PixelLabel l) {
        const double denom = p.normal.dot(dir);
        if (std::abs(denom) < 1e-12) return;
        const double lambda = (p.offset - p.normal.dot(origin)) / denom;
        if (lambda > 0.0 && lambda < best) {
          best = lambda;
          label = l;
        }
      };
      hit(scene.wall, PixelLabel::wall);
      if (scene.floor) hit(*scene.floor, PixelLabel::floor);
      if (label == PixelLabel::none || best > scene.max_range) continue;

      const std::size_t idx = static_cast<std::size_t>(v) * k.width + u;
      out.labels[idx] = label;
      wall_pixels += label == PixelLabel::wall;
      out.true_depth.at(u, v) = best;
      double o = scene.truth.observe(u, v, best);
      if (scene.noise_enabled && o > 0.0) {
        o += scene.noise.sigma(o) * gauss(rng);
        o = std::round(o * 1000.0) / 1000.0;
      }
      out.frame.depth.at(u, v) = o > 0.0 ? o : 0.0;
    }
  }
  if (wall_pixels == 0) {
    throw DegenerateInput("pose sees no wall");
  }

  out.board_pose = (pose.depth_to_world * scene.camera_to_depth).inverse() * scene.board_to_world;
  out.frame.corners.rows = scene.board.rows;
  out.frame.corners.cols = scene.board.cols;
  for (const Vec3& b : scene.board.points()) {
    Vec2 px = projectPoint(scene.rgb, out.board_pose * b);
    if (scene.noise_enabled && scene.sigma_corner > 0.0) {
      px += Vec2(gauss(rng), gauss(rng)) * scene.sigma_corner;
    }
    out.frame.corners.points.push_back(px);
  }
  return out;
}

SyntheticDataset generateDataset(SceneSpec scene, int n_train, int n_test, int threads) {
  planPoses(scene, n_train, n_test);
  SyntheticDataset ds;
  ds.frames.resize(scene.poses.size());
  parallelFor(0, static_cast<int>(scene.poses.size()), threads, [&](int i) {
    ds.frames[static_cast<std::size_t>(i)] = renderFrame(scene, static_cast<std::size_t>(i));
  });
  ds.scene = std::move(scene);
  return ds;
}

}  // namespace depthcal
