#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "depthcal/calibration.hpp"
#include "depthcal/errors.hpp"
#include "depthcal/io.hpp"
#include "depthcal/metrics.hpp"
#include "support.hpp"

using namespace depthcal;
using namespace testsupport;

namespace {

constexpr double kDeg = 3.14159265358979323846 / 180.0;

OrganizedCloud cloudOf(const std::vector<Vec3>& pts) {
  OrganizedCloud c(static_cast<int>(pts.size()), 1);
  for (std::size_t i = 0; i < pts.size(); ++i) c.points[i] = pts[i];
  return c;
}

IndexSet firstN(std::size_t n) {
  IndexSet s;
  for (std::size_t i = 0; i < n; ++i) s.push_back({static_cast<int>(i), 0});
  return s;
}

}  // namespace

TEST_CASE("renderFrame") {
  SUBCASE("identity distortion, fronto-parallel wall at 2 m") {
    SceneSpec scene = quietScene(false);
    const auto frames = renderAt(scene, {2.0});
    const IndexSet wall = labeled(frames[0], PixelLabel::wall);
    REQUIRE(wall.size() == 320u * 240u);
    for (const Pixel& p : wall) {
      CHECK(frames[0].frame.depth.at(p.u, p.v) == doctest::Approx(2.0).epsilon(1e-12));
    }
  }
  SUBCASE("bowl corner depth solves the correction quadratic") {
    SceneSpec scene = quietScene(true);
    scene.truth.setBias(1.0, 0.0);
    const auto frames = renderAt(scene, {3.0});
    // Control (0, 0) sits on pixel (0, 0) and carries true = o - k o^2.
    const PolyFn& f = scene.truth.field.control(0, 0);
    CHECK(f.coefficient(0) == 0.0);
    CHECK(f.coefficient(1) == 1.0);
    const double k = -f.coefficient(2);
    REQUIRE(k > 0.0);
    const double expected = (1.0 - std::sqrt(1.0 - 4.0 * k * 3.0)) / (2.0 * k);
    const double observed = frames[0].frame.depth.at(0, 0);
    CHECK(observed == doctest::Approx(expected).epsilon(1e-12));
    CHECK(observed - 3.0 > 0.02);
    CHECK(frames[0].true_depth.at(0, 0) == doctest::Approx(3.0).epsilon(1e-12));
    // The centre is inside the flat plateau.
    CHECK(frames[0].frame.depth.at(160, 120) == doctest::Approx(3.0).epsilon(1e-12));
  }
  SUBCASE("noise std matches sigma(z)") {
    SceneSpec scene = quietScene(false);
    scene.noise_enabled = true;
    const auto frames = renderAt(scene, {2.0});
    const IndexSet wall = labeled(frames[0], PixelLabel::wall);
    REQUIRE(wall.size() >= 10000u);
    double sum = 0.0, sq = 0.0;
    for (const Pixel& p : wall) {
      const double e = frames[0].frame.depth.at(p.u, p.v) - frames[0].true_depth.at(p.u, p.v);
      sum += e;
      sq += e * e;
    }
    const double n = static_cast<double>(wall.size());
    const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
    const double sigma = scene.noise.sigma(2.0);
    CHECK(std::abs(sd / sigma - 1.0) < 0.1);
    // Noisy depths are whole millimetres.
    const double mm = frames[0].frame.depth.at(wall[0].u, wall[0].v) * 1000.0;
    CHECK(std::abs(mm - std::round(mm)) < 1e-9);
  }
  SUBCASE("injected distortion shows its planarity error") {
    SceneSpec scene = quietScene(true);
    const auto frames = renderAt(scene, {4.0});
    const OrganizedCloud cloud = depthToCloud(frames[0].frame.depth, scene.depth);
    const auto bare = GroundTruthDistortion::bowl(scene.depth, 0.04, 4.0, 0.0, 100.0);
    CHECK(injectedPlanarityRms(bare, scene.depth, 4.0) == doctest::Approx(0.04).epsilon(1e-6));
    // The scene adds a depth bias on top, which rescales the bowl slightly.
    const double rms = injectedPlanarityRms(scene.truth, scene.depth, 4.0);
    CHECK(planarityError(cloud, labeled(frames[0], PixelLabel::wall)) ==
          doctest::Approx(rms).epsilon(0.05));
  }
  SUBCASE("pose that misses the wall") {
    SceneSpec scene = quietScene(false);
    // Behind the wall, looking away from it.
    scene.poses = {
        {RigidTransform(Eigen::Quaterniond::Identity(), Vec3(0.0, 0.0, 2.0)), false, 2.0}};
    CHECK_THROWS_AS(renderFrame(scene, 0), DegenerateInput);
  }
}

TEST_CASE("generateDataset") {
  SceneSpec scene = SceneSpec::defaults();
  scene.floor = Plane::fromNormalOffset(Vec3::UnitY(), 1.0);
  const SyntheticDataset ds = generateDataset(scene, 50, 8);
  REQUIRE(ds.frames.size() == 58u);
  std::vector<double> test_distances;
  for (const auto& f : ds.frames) {
    if (f.test) test_distances.push_back(f.true_distance);
  }
  REQUIRE(test_distances.size() == 8u);
  for (std::size_t i = 1; i < test_distances.size(); ++i) {
    CHECK(test_distances[i] > test_distances[i - 1]);
  }
  for (std::size_t i = 0; i < 50; ++i) CHECK_FALSE(ds.frames[i].test);

  SUBCASE("deterministic and independent of the thread count") {
    const SyntheticDataset again = generateDataset(scene, 50, 8, 3);
    for (std::size_t i = 0; i < ds.frames.size(); ++i) {
      CHECK(again.frames[i].frame.depth.data == ds.frames[i].frame.depth.data);
      CHECK(again.frames[i].frame.corners.points == ds.frames[i].frame.corners.points);
    }
  }
  SUBCASE("training poses vary in distance and orientation") {
    double lo = 1e9, hi = 0.0, max_tilt = 0.0;
    for (std::size_t i = 0; i < 50; ++i) {
      lo = std::min(lo, ds.frames[i].true_distance);
      hi = std::max(hi, ds.frames[i].true_distance);
      const Vec3 n = ds.frames[i].board_pose.rotation() * Vec3::UnitZ();
      max_tilt = std::max(max_tilt, std::acos(std::abs(n.z())) / kDeg);
    }
    CHECK(lo < 1.3);
    CHECK(hi > 4.0);
    CHECK(max_tilt > 15.0);
  }
}

TEST_CASE("noise-off rendering lies on the distorted surface") {
  SceneSpec scene = quietScene(true);
  scene.floor = Plane::fromNormalOffset(Vec3::UnitY(), 1.0);
  const SyntheticDataset ds = generateDataset(scene, 10, 0);
  for (const LabeledFrame& f : ds.frames) {
    const std::size_t k = static_cast<std::size_t>(&f - ds.frames.data());
    const RigidTransform& to_world = ds.scene.poses[k].depth_to_world;
    const OrganizedCloud truth = depthToCloud(f.true_depth, ds.scene.depth);
    double worst_model = 0.0, worst_wall = 0.0, worst_floor = 0.0;
    for (int v = 0; v < 240; ++v) {
      for (int u = 0; u < 320; ++u) {
        const PixelLabel l = f.labels[static_cast<std::size_t>(v) * 320 + u];
        if (l == PixelLabel::none) continue;
        const double o = f.frame.depth.at(u, v);
        worst_model = std::max(worst_model,
                               std::abs(ds.scene.truth.correct(u, v, o) - f.true_depth.at(u, v)));
        const Vec3 w = to_world * truth.at(u, v).value();
        if (l == PixelLabel::wall) {
          worst_wall = std::max(worst_wall, std::abs(ds.scene.wall.signedDistance(w)));
        } else {
          worst_floor = std::max(worst_floor, std::abs(ds.scene.floor->signedDistance(w)));
        }
      }
    }
    CHECK(worst_model < 1e-9);
    CHECK(worst_wall < 1e-9);
    CHECK(worst_floor < 1e-9);
  }
}

TEST_CASE("planarityError") {
  std::vector<Vec3> pts;
  for (int i = 0; i < 10; ++i) {
    for (int j = 0; j < 10; ++j) {
      pts.push_back({0.1 * i, 0.1 * j, 2.0 + ((i + j) % 2 ? 0.01 : -0.01)});
    }
  }
  SUBCASE("alternating +-1 cm") {
    CHECK(planarityError(cloudOf(pts), firstN(pts.size())) == doctest::Approx(0.01).epsilon(1e-9));
  }
  SUBCASE("exact plane") {
    for (auto& p : pts) p.z() = 1.0 + 0.3 * p.x() - 0.2 * p.y();
    CHECK(planarityError(cloudOf(pts), firstN(pts.size())) < 1e-12);
  }
  SUBCASE("too few points") {
    CHECK_THROWS_AS(planarityError(cloudOf(pts), firstN(2)), InvalidArgument);
  }
}

TEST_CASE("globalError") {
  const Plane plane = Plane::fromNormalOffset(Vec3::UnitZ(), 2.0);
  std::vector<Vec3> pts;
  for (int i = 0; i < 20; ++i) pts.push_back({0.05 * i, -0.03 * i, 2.0});
  CHECK(std::abs(globalError(cloudOf(pts), firstN(pts.size()), plane)) < 1e-15);
  for (auto& p : pts) p.z() += 0.02;
  CHECK(globalError(cloudOf(pts), firstN(pts.size()), plane) == doctest::Approx(0.02).epsilon(1e-9));
  CHECK_THROWS_AS(globalError(cloudOf(pts), {}, plane), InvalidArgument);
}

TEST_CASE("rotationErrorDeg") {
  const Vec3 x = Vec3::UnitX();
  CHECK(std::abs(rotationErrorDeg(Vec3::UnitZ(), x)) < 1e-12);
  CHECK(rotationErrorDeg(x, x) == doctest::Approx(-90.0));
  const Vec3 tilted = Eigen::AngleAxisd(-2.0 * kDeg, Vec3::UnitY()) * Vec3::UnitZ();
  CHECK(tilted.x() == doctest::Approx(-std::sin(2.0 * kDeg)));
  CHECK(rotationErrorDeg(tilted, x) == doctest::Approx(2.0).epsilon(1e-9));
  CHECK_THROWS_AS(rotationErrorDeg(Vec3(0.0, 0.0, 2.0), x), InvalidArgument);
}

TEST_CASE("depthVsGroundTruth") {
  SUBCASE("injected +5 cm at 2 m") {
    SceneSpec scene = quietScene(false);
    scene.truth.setBias(2.0 / 2.05, 0.0);
    const auto frames = renderAt(scene, {2.0});
    const OrganizedCloud cloud = depthToCloud(frames[0].frame.depth, scene.depth);
    const IndexSet wall = labeled(frames[0], PixelLabel::wall);
    CHECK(depthVsGroundTruth(cloud, wall, 2.0) == doctest::Approx(0.05).epsilon(1e-9));
    const OrganizedCloud truth = depthToCloud(frames[0].true_depth, scene.depth);
    CHECK(std::abs(depthVsGroundTruth(truth, wall, 2.0)) < 1e-12);
  }
  SUBCASE("empty inliers") {
    CHECK_THROWS_AS(depthVsGroundTruth(OrganizedCloud(2, 2), {}, 1.0), InvalidArgument);
  }
}

TEST_CASE("noiseless calibration recovers held-out depth") {
  SceneSpec scene = quietScene(true);
  const SyntheticDataset ds = generateDataset(scene, 50, 8);
  const Dataset data = datasetOf(ds);
  CalibrationOptions opt;
  const CalibrationRun run = calibrate(data, opt);
  std::size_t t = 0;
  for (const LabeledFrame& f : ds.frames) {
    if (!f.test) continue;
    const DepthImage corrected = correctDepth(run.calibration.u_map, run.calibration.g_map,
                                              data.test[t++].depth);
    double sum = 0.0;
    std::size_t n = 0;
    for (int v = 0; v < 240; ++v) {
      for (int u = 0; u < 320; ++u) {
        if (f.labels[static_cast<std::size_t>(v) * 320 + u] != PixelLabel::wall) continue;
        sum += std::abs(corrected.at(u, v) - f.true_depth.at(u, v));
        ++n;
      }
    }
    INFO("test distance " << f.true_distance);
    CHECK(sum / static_cast<double>(n) < 1e-4);
  }
}
