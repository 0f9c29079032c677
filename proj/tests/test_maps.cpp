#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "depthcal/errors.hpp"
#include "depthcal/maps.hpp"

using namespace depthcal;

namespace {

// Weighted least squares through the normal equations, solved by Gaussian elimination in
// long double. Deliberately shares nothing with the library's QR path.
std::vector<double> oracleFit(const std::vector<DepthSample>& s, const NoiseModel& noise,
                              int degree, bool constant_zero) {
  const int first = constant_zero ? 1 : 0;
  const int n = degree + 1 - first;
  std::vector<std::vector<long double>> m(n, std::vector<long double>(n + 1, 0.0L));
  for (const auto& x : s) {
    const long double sig = std::max(noise.sigma(x.z), 1e-5);
    const long double w = 1.0L / (sig * sig);
    std::vector<long double> phi(n);
    for (int j = 0; j < n; ++j) phi[j] = std::pow(static_cast<long double>(x.z), j + first);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) m[i][j] += w * phi[i] * phi[j];
      m[i][n] += w * phi[i] * x.z_plane;
    }
  }
  for (int c = 0; c < n; ++c) {
    int piv = c;
    for (int r = c + 1; r < n; ++r) {
      if (std::abs(m[r][c]) > std::abs(m[piv][c])) piv = r;
    }
    std::swap(m[c], m[piv]);
    for (int r = 0; r < n; ++r) {
      if (r == c) continue;
      const long double f = m[r][c] / m[c][c];
      for (int k = c; k <= n; ++k) m[r][k] -= f * m[c][k];
    }
  }
  std::vector<double> out(static_cast<std::size_t>(degree + 1), 0.0);
  for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j + first)] = m[j][n] / m[j][j];
  return out;
}

PolyFn randomPoly(std::mt19937_64& rng, int degree, bool constant_zero) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> c(static_cast<std::size_t>(degree + 1));
  c[0] = constant_zero ? 0.0 : 0.02 * u(rng);
  c[1] = 1.0 + 0.05 * u(rng);
  for (int i = 2; i <= degree; ++i) c[static_cast<std::size_t>(i)] = 0.01 * u(rng);
  return PolyFn(c, constant_zero);
}

}  // namespace

TEST_CASE("PolyFn evaluation") {
  CHECK(PolyFn{}(2.5) == 2.5);
  CHECK(PolyFn({0.03, 0.97, 0.01})(2.0) == doctest::Approx(2.01).epsilon(1e-15));
  CHECK(PolyFn({0.0, 0.95, 0.02}, true)(3.0) == doctest::Approx(3.03).epsilon(1e-15));
  CHECK(polyEval(PolyFn::identity(3), 1.7) == 1.7);
  CHECK_THROWS_AS(PolyFn({0.1, 1.0}, true), InvalidArgument);
  CHECK_THROWS_AS(PolyFn({0.0, 1.0, 0.0, 0.0, 0.0, 0.0}), InvalidArgument);
}

TEST_CASE("fitWeightedPoly exact interpolation") {
  const NoiseModel noise = NoiseModel::kinectQuantization();
  SUBCASE("free constant") {
    std::vector<DepthSample> s;
    for (double z : {1.0, 2.0, 3.0, 4.0}) s.push_back({z, 0.03 + 0.97 * z + 0.01 * z * z});
    const PolyFn f = fitWeightedPoly(s, noise, 2, false);
    CHECK(std::abs(f.coefficient(0) - 0.03) < 1e-9);
    CHECK(std::abs(f.coefficient(1) - 0.97) < 1e-9);
    CHECK(std::abs(f.coefficient(2) - 0.01) < 1e-9);
  }
  SUBCASE("constant zero") {
    std::vector<DepthSample> s;
    for (double z : {1.0, 2.5, 4.0}) s.push_back({z, 0.95 * z + 0.02 * z * z});
    const PolyFn f = fitWeightedPoly(s, noise, 2, true);
    CHECK(f.coefficient(0) == 0.0);
    CHECK(std::abs(f.coefficient(1) - 0.95) < 1e-9);
    CHECK(std::abs(f.coefficient(2) - 0.02) < 1e-9);
  }
  SUBCASE("too few depths") {
    std::vector<DepthSample> s{{1.0, 1.0}, {1.0, 1.1}, {2.0, 2.0}};
    CHECK_THROWS_AS(fitWeightedPoly(s, noise, 2, false), DegenerateInput);
  }
}

TEST_CASE("fitWeightedPoly matches the normal-equation oracle") {
  const NoiseModel noise = NoiseModel::kinectQuantization();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> depth(0.5, 4.5);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    for (bool cz : {false, true}) {
      const int degree = 1 + trial % 3;
      std::vector<DepthSample> s;
      for (int i = 0; i < 200; ++i) {
        const double z = depth(rng);
        s.push_back({z, 0.01 + 0.98 * z + 0.004 * z * z + noise.sigma(z) * n01(rng)});
      }
      const PolyFn f = fitWeightedPoly(s, noise, degree, cz);
      const std::vector<double> o = oracleFit(s, noise, degree, cz);
      for (int j = 0; j <= degree; ++j) {
        CHECK(std::abs(f.coefficient(j) - o[static_cast<std::size_t>(j)]) < 1e-8);
      }
    }
  }
}

TEST_CASE("weightedMean") {
  std::vector<WeightedSample> s{{0.25, 2.0, 2.1}, {0.75, 3.0, 3.1}};
  const auto m = weightedMean(s);
  REQUIRE(m);
  CHECK(m->z == doctest::Approx(2.75));
  CHECK(m->z_plane == doctest::Approx(2.85));
  std::vector<WeightedSample> zero{{0.0, 2.0, 2.1}};
  CHECK_FALSE(weightedMean(zero));
  CHECK_FALSE(weightedMean({}));
}

TEST_CASE("control grid extent") {
  const UndistortionMap m(10, 7, 4, 3);
  CHECK(m.cols() == 4);  // ceil(10/4) + 1
  CHECK(m.rows() == 4);  // ceil(7/3) + 1
  const auto w = m.surrounding(9, 6);
  CHECK(w[3].s == 12);
  CHECK(w[3].t == 9);
  CHECK_THROWS_AS(m.surrounding(10, 0), InvalidArgument);
  CHECK_THROWS_AS(m.surrounding(0, -1), InvalidArgument);
}

TEST_CASE("bilinear weights") {
  const UndistortionMap m(16, 16, 4, 4);
  auto weightAt = [&](int u, int v, int s, int t) {
    double total = 0.0;
    for (const auto& cw : m.surrounding(u, v)) {
      if (cw.s == s && cw.t == t) total += cw.weight;
    }
    return total;
  };
  SUBCASE("cell midpoint") {
    for (auto [s, t] : {std::pair{4, 4}, {8, 4}, {4, 8}, {8, 8}}) {
      CHECK(weightAt(6, 6, s, t) == 0.25);
    }
  }
  SUBCASE("on a control pixel") {
    CHECK(weightAt(4, 4, 4, 4) == 1.0);
    CHECK(weightAt(4, 4, 8, 4) == 0.0);
    CHECK(weightAt(4, 4, 4, 8) == 0.0);
    CHECK(weightAt(4, 4, 8, 8) == 0.0);
  }
  SUBCASE("one dimensional") {
    CHECK(weightAt(5, 4, 4, 4) == 0.75);
    CHECK(weightAt(5, 4, 8, 4) == 0.25);
    CHECK(weightAt(5, 4, 4, 8) == 0.0);
    CHECK(weightAt(5, 4, 8, 8) == 0.0);
  }
}

TEST_CASE("partition of unity over random pixels and bins") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> bin(1, 16);
  std::uniform_int_distribution<int> size(1, 400);
  for (int i = 0; i < 10000; ++i) {
    const int w = size(rng), h = size(rng);
    const UndistortionMap m(w, h, bin(rng), bin(rng), 1);
    const int u = std::uniform_int_distribution<int>(0, w - 1)(rng);
    const int v = std::uniform_int_distribution<int>(0, h - 1)(rng);
    double sum = 0.0;
    for (const auto& cw : m.surrounding(u, v)) {
      CHECK(cw.weight >= 0.0);
      sum += cw.weight;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("undistortDepth") {
  std::mt19937_64 rng(8);
  UndistortionMap m(16, 12, 4, 4, 2);
  SUBCASE("identity") {
    for (int v = 0; v < 12; ++v) {
      for (int u = 0; u < 16; ++u) CHECK(m.undistortDepth(u, v, 2.345) == 2.345);
    }
  }
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) m.setControl(c, r, randomPoly(rng, 2, false));
  }
  SUBCASE("at a control pixel") {
    CHECK(m.undistortDepth(8, 4, 3.0) == m.control(2, 1)(3.0));
  }
  SUBCASE("at a bin midpoint") {
    const double mean = (m.control(1, 1)(3.0) + m.control(2, 1)(3.0) + m.control(1, 2)(3.0) +
                         m.control(2, 2)(3.0)) / 4.0;
    CHECK(m.undistortDepth(6, 6, 3.0) == doctest::Approx(mean).epsilon(1e-15));
  }
  SUBCASE("invalid depth stays invalid") {
    CHECK(m.undistortDepth(3, 3, 0.0) == 0.0);
  }
  SUBCASE("continuity across cell edges") {
    for (int c = 1; c + 1 < m.cols(); ++c) {
      for (double v : {4.0, 5.0, 6.5, 7.25}) {
        const double s = c * m.binX();
        CHECK(m.evaluateInCell(c - 1, 1, s, v, 2.2) == m.evaluateInCell(c, 1, s, v, 2.2));
      }
    }
    for (int r = 1; r + 1 < m.rows(); ++r) {
      const double t = r * m.binY();
      CHECK(m.evaluateInCell(2, r - 1, 9.5, t, 2.2) == m.evaluateInCell(2, r, 9.5, t, 2.2));
    }
  }
  SUBCASE("setControl rejects a degree mismatch") {
    CHECK_THROWS_AS(m.setControl(0, 0, PolyFn::identity(3)), InvalidArgument);
  }
}

TEST_CASE("applyUndistortion on clouds") {
  CameraIntrinsics k;
  k.fx = k.fy = 50;
  k.cx = 15.5;
  k.cy = 11.5;
  k.width = 32;
  k.height = 24;
  DepthImage img(32, 24, 2.0);
  for (int u = 0; u < 32; ++u) img.at(u, 3) = 0.0;
  const OrganizedCloud cloud = depthToCloud(img, k);
  UndistortionMap m(32, 24, 4, 4, 2);
  SUBCASE("identity") {
    const OrganizedCloud out = applyUndistortion(m, cloud);
    for (std::size_t i = 0; i < out.points.size(); ++i) {
      REQUIRE(out.points[i].has_value() == cloud.points[i].has_value());
      if (out.points[i]) CHECK(*out.points[i] == *cloud.points[i]);
    }
  }
  SUBCASE("uniform scale") {
    for (int r = 0; r < m.rows(); ++r) {
      for (int c = 0; c < m.cols(); ++c) m.setControl(c, r, PolyFn({0.0, 1.1, 0.0}));
    }
    const OrganizedCloud out = applyUndistortion(m, cloud);
    for (std::size_t i = 0; i < out.points.size(); ++i) {
      if (out.points[i]) CHECK((*out.points[i] - 1.1 * *cloud.points[i]).norm() < 1e-12);
    }
  }
  SUBCASE("line of sight preserved") {
    std::mt19937_64 rng(4);
    for (int r = 0; r < m.rows(); ++r) {
      for (int c = 0; c < m.cols(); ++c) m.setControl(c, r, randomPoly(rng, 2, false));
    }
    const OrganizedCloud out = applyUndistortion(m, cloud);
    for (std::size_t i = 0; i < out.points.size(); ++i) {
      if (!out.points[i]) continue;
      const Vec3& a = *cloud.points[i];
      const Vec3& b = *out.points[i];
      CHECK(a.cross(b).norm() < 1e-12);
      CHECK(a.dot(b) > 0.0);
    }
  }
}

TEST_CASE("inverse map flattens a distorted plane") {
  // Distortion defined through its inverse: the observed depth o at each pixel is the root of
  // U(u, v, o) = true depth, found here by bisection.
  CameraIntrinsics k;
  k.fx = k.fy = 60;
  k.cx = 19.5;
  k.cy = 14.5;
  k.width = 40;
  k.height = 30;
  std::mt19937_64 rng(77);
  UndistortionMap m(40, 30, 4, 4, 2);
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) m.setControl(c, r, randomPoly(rng, 2, false));
  }
  const Plane wall = Plane::fromNormalOffset(Vec3(0.1, -0.05, 1.0), 2.5);
  DepthImage observed(40, 30);
  for (int v = 0; v < 30; ++v) {
    for (int u = 0; u < 40; ++u) {
      const Vec3 ray = pixelRay(k, u, v);
      const double truth = wall.offset / wall.normal.dot(ray);
      double lo = 0.5 * truth, hi = 2.0 * truth;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (m.undistortDepth(u, v, mid) < truth ? lo : hi) = mid;
      }
      observed.at(u, v) = 0.5 * (lo + hi);
    }
  }
  const OrganizedCloud out = applyUndistortion(m, depthToCloud(observed, k));
  double worst = 0.0;
  for (const auto& p : out.points) worst = std::max(worst, std::abs(wall.signedDistance(*p)));
  CHECK(worst < 1e-9);
}

TEST_CASE("dependent corner") {
  SUBCASE("ramps cancel") {
    const PolyFn g = completeDependentCorner(PolyFn({0.0, 1.0, 0.0}, true),
                                             PolyFn({0.0, 1.01, 0.0}, true),
                                             PolyFn({0.0, 0.99, 0.0}, true));
    CHECK(g.coefficient(0) == 0.0);
    CHECK(g.coefficient(1) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(g.coefficient(2) == 0.0);
  }
  SUBCASE("identical corners") {
    const PolyFn f({0.0, 0.97, 0.008}, true);
    CHECK(completeDependentCorner(f, f, f) == f);
  }
  SUBCASE("random corners satisfy the invariant") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> z(0.5, 5.0);
    for (int t = 0; t < 50; ++t) {
      const int degree = 1 + t % 4;
      const PolyFn a = randomPoly(rng, degree, true);
      const PolyFn b = randomPoly(rng, degree, true);
      const PolyFn c = randomPoly(rng, degree, true);
      const GlobalMap g(64, 48, a, b, c);
      for (int i = 0; i < 20; ++i) {
        const double d = z(rng);
        CHECK(std::abs(g.corner00()(d) + g.cornerWH()(d) - g.cornerW0()(d) - g.corner0H()(d)) <
              1e-12);
      }
    }
  }
  SUBCASE("degree mismatch") {
    CHECK_THROWS_AS(completeDependentCorner(PolyFn::identity(2, true), PolyFn::identity(1, true),
                                            PolyFn::identity(2, true)),
                    InvalidArgument);
  }
}

TEST_CASE("GlobalMap evaluation") {
  SUBCASE("identity") {
    const GlobalMap g(64, 48);
    for (double u : {0.0, 10.0, 63.0}) {
      for (double v : {0.0, 20.0, 47.0}) CHECK(g.evaluate(u, v, 2.7) == 2.7);
    }
  }
  std::mt19937_64 rng(13);
  const GlobalMap g(64, 48, randomPoly(rng, 2, true), randomPoly(rng, 2, true),
                    randomPoly(rng, 2, true));
  SUBCASE("centre is the corner mean") {
    const double d = 3.1;
    const double mean =
        (g.corner00()(d) + g.cornerW0()(d) + g.corner0H()(d) + g.cornerWH()(d)) / 4.0;
    CHECK(g.evaluate(32, 24, d) == doctest::Approx(mean).epsilon(1e-15));
  }
  SUBCASE("affine ramp") {
    const GlobalMap r(64, 48, PolyFn({0.0, 1.0}, true), PolyFn({0.0, 1.02}, true),
                      PolyFn({0.0, 0.98}, true));
    for (double u : {0.0, 13.0, 40.5, 64.0}) {
      for (double v : {0.0, 7.0, 33.3, 48.0}) {
        const double slope = 1.0 + 0.02 * u / 64.0 - 0.02 * v / 48.0;
        CHECK(r.evaluate(u, v, 2.0) == doctest::Approx(2.0 * slope).epsilon(1e-14));
      }
    }
  }
  SUBCASE("affine in the pixel for a fixed depth") {
    for (double d : {0.8, 2.0, 4.4}) {
      const double g0 = g.evaluate(0, 0, d);
      const double gu = g.evaluate(1, 0, d) - g0;
      const double gv = g.evaluate(0, 1, d) - g0;
      for (double u : {5.0, 31.0, 63.0}) {
        for (double v : {3.0, 29.0, 47.0}) {
          CHECK(std::abs(g.evaluate(u, v, d) - (g0 + u * gu + v * gv)) < 1e-12);
        }
      }
    }
  }
  SUBCASE("uniform scale keeps planes planar") {
    CameraIntrinsics k;
    k.fx = k.fy = 50;
    k.cx = 31.5;
    k.cy = 23.5;
    k.width = 64;
    k.height = 48;
    // A depth-quadratic term bends tilted planes; a pure scale does not.
    const PolyFn f({0.0, 0.97, 0.0}, true);
    const GlobalMap uniform(64, 48, f, f, f);
    const Plane wall = Plane::fromNormalOffset(Vec3(0.2, 0.1, 1.0), 2.0);
    std::vector<Vec3> pts;
    for (int v = 0; v < 48; ++v) {
      for (int u = 0; u < 64; ++u) {
        const Vec3 ray = pixelRay(k, u, v);
        const double d = wall.offset / wall.normal.dot(ray);
        pts.push_back(ray * uniform.evaluate(u, v, d));
      }
    }
    const Plane fit = fitPlane(pts);
    double worst = 0.0;
    for (const Vec3& p : pts) worst = std::max(worst, std::abs(fit.signedDistance(p)));
    CHECK(worst < 1e-9);
  }
  SUBCASE("rejects a constant term") {
    CHECK_THROWS_AS(GlobalMap(64, 48, PolyFn({0.1, 1.0}), PolyFn({0.0, 1.0}),
                              PolyFn({0.0, 1.0})),
                    InvalidArgument);
  }
}

TEST_CASE("full correction") {
  CameraIntrinsics k;
  k.fx = k.fy = 50;
  k.cx = 15.5;
  k.cy = 11.5;
  k.width = 32;
  k.height = 24;
  DepthImage img(32, 24);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> d(0.5, 4.0);
  for (double& x : img.data) x = d(rng);
  img.at(5, 5) = 0.0;
  SUBCASE("identity maps equal depthToCloud") {
    const OrganizedCloud a =
        applyFullCorrection(UndistortionMap(32, 24, 4, 4), GlobalMap(32, 24), img, k);
    const OrganizedCloud b = depthToCloud(img, k);
    for (std::size_t i = 0; i < a.points.size(); ++i) {
      REQUIRE(a.points[i].has_value() == b.points[i].has_value());
      if (a.points[i]) CHECK(*a.points[i] == *b.points[i]);
    }
  }
  SUBCASE("scale and inverse scale cancel") {
    UndistortionMap u(32, 24, 4, 4, 1);
    for (int r = 0; r < u.rows(); ++r) {
      for (int c = 0; c < u.cols(); ++c) u.setControl(c, r, PolyFn({0.0, 1.1}));
    }
    const PolyFn inv({0.0, 1.0 / 1.1}, true);
    const DepthImage out = correctDepth(u, GlobalMap(32, 24, inv, inv, inv), img);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
      CHECK(std::abs(out.data[i] - img.data[i]) < 1e-12);
    }
    CHECK(out.at(5, 5) == 0.0);
  }
  SUBCASE("threads do not change the result") {
    UndistortionMap u(32, 24, 4, 4, 2);
    for (int r = 0; r < u.rows(); ++r) {
      for (int c = 0; c < u.cols(); ++c) u.setControl(c, r, randomPoly(rng, 2, false));
    }
    const GlobalMap g(32, 24, randomPoly(rng, 2, true), randomPoly(rng, 2, true),
                      randomPoly(rng, 2, true));
    const OrganizedCloud a = applyFullCorrection(u, g, img, k, 1);
    const OrganizedCloud b = applyFullCorrection(u, g, img, k, 4);
    CHECK(a.points == b.points);
  }
  SUBCASE("size mismatch") {
    CHECK_THROWS_AS(applyUndistortion(UndistortionMap(16, 24, 4, 4), img), InvalidArgument);
  }
}
