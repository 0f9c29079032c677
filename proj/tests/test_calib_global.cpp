#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "depthcal/calib_global.hpp"
#include "depthcal/errors.hpp"
#include "support.hpp"

using namespace depthcal;
using namespace testsupport;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Bench {
  SyntheticDataset ds;
  std::vector<FrameObservation> obs;
  RefinementState truth;
};

// Noiseless frames with no per-pixel distortion, so the identity undistortion map is exact.
Bench makeBench(int n_frames, bool bias) {
  SceneSpec scene = quietScene(false);
  if (bias) scene.truth.setBias(0.97, 0.008);
  // The generator plans at least 10 poses; keep the first n.
  Bench b{generateDataset(scene, std::max(n_frames, 10), 0), {}, {}};
  b.ds.frames.resize(static_cast<std::size_t>(n_frames));
  for (std::size_t k = 0; k < b.ds.frames.size(); ++k) {
    const LabeledFrame& f = b.ds.frames[k];
    b.obs.push_back({"f" + std::to_string(k), f.frame.corners, f.frame.depth,
                     labeled(f, PixelLabel::wall)});
    b.truth.board_poses.push_back(f.board_pose);
  }
  b.truth.camera_to_depth = b.ds.scene.camera_to_depth;
  b.truth.depth_intrinsics = b.ds.scene.depth;
  b.truth.global_map = b.ds.scene.truth.bias;
  return b;
}

GlobalConfig fastConfig() {
  GlobalConfig cfg;
  cfg.pixel_stride = 3;
  return cfg;
}

double translationError(const RigidTransform& a, const RigidTransform& b) {
  return (a.translation() - b.translation()).norm();
}

void checkDependentCorner(const GlobalMap& g) {
  for (int i = 0; i <= g.degree(); ++i) {
    CHECK(std::abs(g.cornerWH().coefficient(i) -
                   (g.cornerW0().coefficient(i) + g.corner0H().coefficient(i) -
                    g.corner00().coefficient(i))) <= 1e-12);
  }
}

}  // namespace

TEST_CASE("residualRepr") {
  const Bench b = makeBench(3, false);
  const auto& scene = b.ds.scene;
  SUBCASE("perfect pose and corners give zeros") {
    const Eigen::VectorXd r = residualRepr(b.obs[0].corners, b.truth.board_poses[0], scene.rgb,
                                           scene.board, 0.2);
    CHECK(r.size() == 2 * scene.board.rows * scene.board.cols);
    CHECK(r.cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("one corner off by a pixel contributes 25") {
    CornerGrid c = b.obs[0].corners;
    c.points[5].x() += 1.0;
    const Eigen::VectorXd r = residualRepr(c, b.truth.board_poses[0], scene.rgb, scene.board, 0.2);
    CHECK(r.squaredNorm() == doctest::Approx(25.0).epsilon(1e-8));
    CHECK(r[10] == doctest::Approx(-5.0).epsilon(1e-8));
  }
  SUBCASE("matches the reprojection error formula") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 0.01);
    const RigidTransform pose =
        b.truth.board_poses[1].plus(Vec3(n(rng), n(rng), n(rng)), Vec3(n(rng), n(rng), n(rng)));
    const auto& k = scene.rgb;
    double e = 0.0;
    const auto object = scene.board.points();
    for (std::size_t i = 0; i < object.size(); ++i) {
      const Vec3 pc = pose.rotation() * object[i] + pose.translation();
      const double x = pc.x() / pc.z(), y = pc.y() / pc.z();
      const double r2 = x * x + y * y;
      const double rad = 1 + k.radial[0] * r2 + k.radial[1] * r2 * r2 + k.radial[2] * r2 * r2 * r2;
      const double p1 = k.tangential[0], p2 = k.tangential[1];
      const double xd = x * rad + 2 * p1 * x * y + p2 * (r2 + 2 * x * x);
      const double yd = y * rad + p1 * (r2 + 2 * y * y) + 2 * p2 * x * y;
      const Vec2 px(k.fx * xd + k.cx, k.fy * yd + k.cy);
      e += (px - b.obs[1].corners.points[i]).squaredNorm() / (0.2 * 0.2);
    }
    const Eigen::VectorXd r = residualRepr(b.obs[1].corners, pose, scene.rgb, scene.board, 0.2);
    CHECK(r.squaredNorm() == doctest::Approx(e).epsilon(1e-10));
  }
  SUBCASE("corner behind the camera") {
    const RigidTransform behind(Eigen::Quaterniond::Identity(), Vec3(0.0, 0.0, -1.0));
    CHECK_THROWS_AS(residualRepr(b.obs[0].corners, behind, scene.rgb, scene.board, 0.2),
                    InvalidArgument);
  }
}

TEST_CASE("residualPos") {
  SUBCASE("single point 1 cm off the plane") {
    CameraIntrinsics k;
    k.width = 320;
    k.height = 240;
    k.fx = k.fy = 300.0;
    k.cx = 160.0;
    k.cy = 120.0;
    BoardSpec board{3, 3, 0.1};
    FrameObservation f;
    f.id = "one";
    f.undistorted = DepthImage(320, 240);
    f.undistorted.at(160, 120) = 2.01;
    f.inliers = {{160, 120}};
    RefinementState s;
    s.board_poses = {RigidTransform(Eigen::Quaterniond::Identity(), Vec3(0.0, 0.0, 2.0))};
    s.depth_intrinsics = k;
    s.global_map = GlobalMap(320, 240, 2);
    GlobalConfig cfg;
    cfg.sigma_undistorted = NoiseModel{{0.01}};
    const Eigen::VectorXd r = residualPos(f, s, 0, board, cfg);
    REQUIRE(r.size() == 1);
    CHECK(r.squaredNorm() == doctest::Approx(1.0).epsilon(1e-10));
  }

  const Bench b = makeBench(3, true);
  const auto& scene = b.ds.scene;
  GlobalConfig cfg;
  // Points sit a few metres away, so a few ulps of their coordinates is the exact-zero floor.
  SUBCASE("ground truth is on the plane") {
    for (std::size_t k = 0; k < b.obs.size(); ++k) {
      const Eigen::VectorXd r = residualPos(b.obs[k], b.truth, k, scene.board, cfg);
      CHECK(r.size() == static_cast<Eigen::Index>(b.obs[k].inliers.size()));
      CHECK(r.cwiseAbs().maxCoeff() < 1e-14);
    }
  }
  SUBCASE("matches the plane distance formula") {
    RefinementState s = b.truth;
    s.camera_to_depth = s.camera_to_depth.plus(Vec3(0.01, -0.02, 0.005), Vec3(0.01, 0.0, -0.02));
    s.depth_intrinsics.fx *= 1.01;
    s.global_map = GlobalMap(320, 240, PolyFn({0.0, 1.0, 0.001}, true),
                             PolyFn({0.0, 0.99, 0.0}, true), PolyFn({0.0, 1.02, -0.002}, true));
    const std::size_t k = 2;
    const RigidTransform to_depth = s.camera_to_depth * s.board_poses[k];
    std::vector<Vec3> board_depth;
    for (const Vec3& p : scene.board.points()) board_depth.push_back(to_depth.apply(p));
    const Plane plane = fitPlane(board_depth);
    const auto& kd = s.depth_intrinsics;
    const double n = static_cast<double>(b.obs[k].inliers.size());
    double e = 0.0;
    for (const Pixel& px : b.obs[k].inliers) {
      const double z = b.obs[k].undistorted.at(px.u, px.v);
      const double g = s.global_map.evaluate(px.u, px.v, z);
      const Vec3 p(g * (px.u - kd.cx) / kd.fx, g * (px.v - kd.cy) / kd.fy, g);
      const double sigma = cfg.sigma_undistorted.sigma(z);
      e += (orthProject(p, plane) - p).squaredNorm() / (n * sigma * sigma);
    }
    const Eigen::VectorXd r = residualPos(b.obs[k], s, k, scene.board, cfg);
    CHECK(r.squaredNorm() == doctest::Approx(e).epsilon(1e-10));
  }
  SUBCASE("empty inlier set") {
    FrameObservation f = b.obs[0];
    f.inliers.clear();
    CHECK_THROWS_AS(residualPos(f, b.truth, 0, scene.board, cfg), InvalidArgument);
  }
}

TEST_CASE("initGlobal") {
  SUBCASE("two frames are not enough") {
    const Bench b = makeBench(2, false);
    CHECK_THROWS_AS(initGlobal(b.obs, b.ds.scene.rgb, b.ds.scene.depth, b.ds.scene.board, {}),
                    DegenerateInput);
  }
  SUBCASE("no global error") {
    const Bench b = makeBench(8, false);
    const GlobalInit init =
        initGlobal(b.obs, b.ds.scene.rgb, b.ds.scene.depth, b.ds.scene.board, {});
    CHECK(init.used.size() == 8);
    for (const PolyFn* c : {&init.state.global_map.corner00(), &init.state.global_map.cornerW0(),
                            &init.state.global_map.corner0H()}) {
      CHECK(c->coefficient(0) == 0.0);
      CHECK(std::abs(c->coefficient(1) - 1.0) < 1e-3);
      CHECK(std::abs(c->coefficient(2)) < 1e-3);
    }
    CHECK(translationError(init.state.camera_to_depth, b.truth.camera_to_depth) < 1e-3);
    CHECK(rotationAngleBetween(init.state.camera_to_depth, b.truth.camera_to_depth) * 180.0 / kPi <
          0.05);
  }
  SUBCASE("uniform injected bias") {
    const Bench b = makeBench(8, true);
    const GlobalInit init =
        initGlobal(b.obs, b.ds.scene.rgb, b.ds.scene.depth, b.ds.scene.board, {});
    for (const PolyFn* c : {&init.state.global_map.corner00(), &init.state.global_map.cornerW0(),
                            &init.state.global_map.corner0H()}) {
      CHECK(c->coefficient(0) == 0.0);
      CHECK(std::abs(c->coefficient(1) - 0.97) < 2e-3);
      CHECK(std::abs(c->coefficient(2) - 0.008) < 2e-3);
    }
    checkDependentCorner(init.state.global_map);
  }
}

TEST_CASE("RefinementProblem layout") {
  const Bench b = makeBench(4, false);
  const RefinementProblem p(b.obs, b.ds.scene.rgb, b.ds.scene.depth, b.ds.scene.board, {});
  CHECK(p.parameterCount() == 16 + 6 * 4);
  CHECK(p.blockCount() == 4);
  const RefinementState back = p.unpack(p.pack(b.truth));
  CHECK(back.global_map == b.truth.global_map);
  CHECK(translationError(back.camera_to_depth, b.truth.camera_to_depth) < 1e-15);
  CHECK(back.depth_intrinsics.fx == b.truth.depth_intrinsics.fx);
}

TEST_CASE("refine") {
  const Bench b = makeBench(6, true);
  const auto& scene = b.ds.scene;
  const GlobalConfig cfg = fastConfig();

  SUBCASE("ground truth is a fixed point") {
    const RefineResult r = refine(b.truth, b.obs, scene.rgb, scene.board, cfg);
    CHECK(r.lm.initial_cost < 1e-12);
    CHECK(r.lm.final_cost <= r.lm.initial_cost);
    CHECK(translationError(r.state.camera_to_depth, b.truth.camera_to_depth) < 1e-9);
  }
  SUBCASE("5 mm extrinsic translation error") {
    RefinementState s = b.truth;
    s.camera_to_depth = s.camera_to_depth.plus(Vec3::Zero(), Vec3(0.005, 0.0, 0.0));
    const RefineResult r = refine(s, b.obs, scene.rgb, scene.board, cfg);
    CHECK(translationError(r.state.camera_to_depth, b.truth.camera_to_depth) < 2e-4);
  }
  SUBCASE("2% depth focal error") {
    RefinementState s = b.truth;
    s.depth_intrinsics.fx *= 1.02;
    s.depth_intrinsics.fy *= 1.02;
    const RefineResult r = refine(s, b.obs, scene.rgb, scene.board, cfg);
    CHECK(std::abs(r.state.depth_intrinsics.fx / scene.depth.fx - 1.0) < 1e-3);
    CHECK(std::abs(r.state.depth_intrinsics.fy / scene.depth.fy - 1.0) < 1e-3);
  }
  SUBCASE("dependent corner and unit quaternions after every accepted step") {
    const RefinementProblem problem(b.obs, scene.rgb, scene.depth, scene.board, cfg);
    RefinementState s = b.truth;
    s.global_map = GlobalMap(320, 240, 2);
    s.camera_to_depth = s.camera_to_depth.plus(Vec3(0.0, 0.01, 0.0), Vec3(0.0, 0.003, 0.0));
    GlobalConfig watched = cfg;
    int accepted = 0;
    watched.lm.on_accept = [&](const Eigen::VectorXd& x) {
      ++accepted;
      const RefinementState st = problem.unpack(x);
      checkDependentCorner(st.global_map);
      CHECK(std::abs(st.camera_to_depth.rotation().norm() - 1.0) < 1e-12);
      for (const auto& pose : st.board_poses) {
        CHECK(std::abs(pose.rotation().norm() - 1.0) < 1e-12);
      }
    };
    const RefineResult r = refine(s, b.obs, scene.rgb, scene.board, watched);
    CHECK(accepted > 0);
    SUBCASE("cost never increases") {
      for (std::size_t i = 1; i < r.lm.cost_trace.size(); ++i) {
        CHECK(r.lm.cost_trace[i] <= r.lm.cost_trace[i - 1]);
      }
      CHECK(r.lm.final_cost <= r.lm.initial_cost);
    }
    const GlobalMap& g = r.state.global_map;
    CHECK(std::abs(g.corner00().coefficient(1) - 0.97) < 1e-3);
    CHECK(std::abs(g.corner00().coefficient(2) - 0.008) < 1e-3);
  }
}

TEST_CASE("refine reduces to bundle adjustment with G frozen") {
  const Bench b = makeBench(6, false);
  const auto& scene = b.ds.scene;
  GlobalConfig cfg = fastConfig();
  cfg.refine_global_map = false;
  cfg.refine_intrinsics = false;
  cfg.lm.gtol = 1e-14;
  RefinementState s = b.truth;
  s.camera_to_depth = s.camera_to_depth.plus(Vec3(0.004, -0.003, 0.002), Vec3(0.01, -0.005, 0.008));
  const RefineResult r = refine(s, b.obs, scene.rgb, scene.board, cfg);
  CHECK(translationError(r.state.camera_to_depth, b.truth.camera_to_depth) < 1e-6);
  CHECK(rotationAngleBetween(r.state.camera_to_depth, b.truth.camera_to_depth) < 1e-6);
  CHECK(r.state.global_map == b.truth.global_map);
}

TEST_CASE("Jacobian agrees with finite differences of the cost") {
  const Bench b = makeBench(4, true);
  const auto& scene = b.ds.scene;
  GlobalConfig cfg = fastConfig();
  cfg.pixel_stride = 6;
  const RefinementProblem problem(b.obs, scene.rgb, scene.depth, scene.board, cfg);
  const Eigen::VectorXd x_true = problem.pack(b.truth);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd delta(problem.parameterCount());
    for (int i = 0; i < delta.size(); ++i) delta[i] = 0.01 * n(rng) * problem.stepScale(x_true, i);
    const Eigen::VectorXd x = problem.plus(x_true, delta);
    Eigen::VectorXd dir(problem.parameterCount());
    for (int i = 0; i < dir.size(); ++i) dir[i] = n(rng) * problem.stepScale(x, i);

    const Eigen::VectorXd r = evaluateResiduals(problem, x);
    const double analytic = 2.0 * r.dot(jacobianTimes(problem, x, dir));
    const double h = 1e-6;
    auto cost = [&](double t) {
      return evaluateResiduals(problem, problem.plus(x, t * dir)).squaredNorm();
    };
    const double numeric = (cost(h) - cost(-h)) / (2.0 * h);
    CHECK(std::abs(analytic - numeric) <= 1e-4 * std::abs(numeric));
  }
}
