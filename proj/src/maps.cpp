#include "depthcal/maps.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include <Eigen/QR>

#include "depthcal/errors.hpp"
#include "depthcal/parallel.hpp"

namespace depthcal {

PolyFn::PolyFn(std::span<const double> coefficients, bool constant_zero)
    : constant_zero_(constant_zero) {
  if (coefficients.size() < 2 || coefficients.size() > kMaxDegree + 1) {
    throw InvalidArgument("polynomial degree must be between 1 and 4");
  }
  if (constant_zero && coefficients[0] != 0.0) {
    throw InvalidArgument("constant-zero polynomial with a non-zero constant term");
  }
  coeffs_.fill(0.0);
  std::copy(coefficients.begin(), coefficients.end(), coeffs_.begin());
  degree_ = static_cast<int>(coefficients.size()) - 1;
}

PolyFn::PolyFn(std::initializer_list<double> coefficients, bool constant_zero)
    : PolyFn(std::span<const double>(coefficients.begin(), coefficients.size()), constant_zero) {}

PolyFn PolyFn::identity(int degree, bool constant_zero) {
  if (degree < 1 || degree > kMaxDegree) {
    throw InvalidArgument("polynomial degree must be between 1 and 4");
  }
  std::vector<double> c(static_cast<std::size_t>(degree + 1), 0.0);
  c[1] = 1.0;
  return PolyFn(c, constant_zero);
}

PolyFn fitWeightedPoly(std::span<const DepthSample> samples, const NoiseModel& noise, int degree,
                       bool constant_zero) {
  if (degree < 1 || degree > PolyFn::kMaxDegree) {
    throw InvalidArgument("polynomial degree must be between 1 and 4");
  }
  const int first = constant_zero ? 1 : 0;
  const int unknowns = degree + 1 - first;
  std::set<double> distinct;
  for (const auto& s : samples) {
    distinct.insert(s.z);
  }
  if (static_cast<int>(distinct.size()) < unknowns) {
    throw DegenerateInput("not enough distinct depths to fit a degree-" + std::to_string(degree) +
                          " polynomial");
  }

  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd a(n, unknowns);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    const double inv_sigma = 1.0 / std::max(noise.sigma(s.z), 1e-5);
    double power = constant_zero ? s.z : 1.0;
    for (int j = 0; j < unknowns; ++j) {
      a(i, j) = power * inv_sigma;
      power *= s.z;
    }
    b(i) = s.z_plane * inv_sigma;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-13);
  if (qr.rank() < unknowns) {
    throw DegenerateInput("weighted polynomial fit is singular");
  }
  const Eigen::VectorXd x = qr.solve(b);
  std::vector<double> coeffs(static_cast<std::size_t>(degree + 1), 0.0);
  for (int j = 0; j < unknowns; ++j) {
    coeffs[static_cast<std::size_t>(j + first)] = x[j];
  }
  return PolyFn(coeffs, constant_zero);
}

std::optional<DepthSample> weightedMean(std::span<const WeightedSample> samples) {
  double total = 0.0;
  double z = 0.0;
  double z_plane = 0.0;
  for (const auto& s : samples) {
    total += s.w;
    z += s.w * s.z;
    z_plane += s.w * s.z_plane;
  }
  if (!(total > 0.0)) {
    return std::nullopt;
  }
  return DepthSample{z / total, z_plane / total};
}

UndistortionMap::UndistortionMap(int width, int height, int bin_x, int bin_y, int degree)
    : width_(width), height_(height), bin_x_(bin_x), bin_y_(bin_y), degree_(degree) {
  if (width <= 0 || height <= 0 || bin_x <= 0 || bin_y <= 0) {
    throw InvalidArgument("undistortion map dimensions and bin sizes must be positive");
  }
  cols_ = (width + bin_x - 1) / bin_x + 1;
  rows_ = (height + bin_y - 1) / bin_y + 1;
  controls_.assign(static_cast<std::size_t>(cols_) * rows_, PolyFn::identity(degree));
}

void UndistortionMap::setControl(int col, int row, const PolyFn& f) {
  if (col < 0 || row < 0 || col >= cols_ || row >= rows_) {
    throw InvalidArgument("control index outside the grid");
  }
  if (f.degree() != degree_) {
    throw InvalidArgument("control function degree does not match the map");
  }
  controls_[static_cast<std::size_t>(row) * cols_ + col] = f;
}

std::array<ControlWeight, 4> UndistortionMap::surrounding(int u, int v) const {
  if (u < 0 || v < 0 || u >= width_ || v >= height_) {
    throw InvalidArgument("pixel (" + std::to_string(u) + ", " + std::to_string(v) +
                          ") outside the map");
  }
  const int c0 = u / bin_x_;
  const int r0 = v / bin_y_;
  const int s0 = c0 * bin_x_;
  const int t0 = r0 * bin_y_;
  const double ax = static_cast<double>(u - s0) / bin_x_;
  const double ay = static_cast<double>(v - t0) / bin_y_;
  return {{{c0, r0, s0, t0, (1.0 - ax) * (1.0 - ay)},
           {c0 + 1, r0, s0 + bin_x_, t0, ax * (1.0 - ay)},
           {c0, r0 + 1, s0, t0 + bin_y_, (1.0 - ax) * ay},
           {c0 + 1, r0 + 1, s0 + bin_x_, t0 + bin_y_, ax * ay}}};
}

double UndistortionMap::evaluateInCell(int cell_col, int cell_row, double u, double v,
                                       double d) const {
  if (cell_col < 0 || cell_row < 0 || cell_col + 1 >= cols_ || cell_row + 1 >= rows_) {
    throw InvalidArgument("cell outside the control grid");
  }
  const double wx = 1.0 - std::abs(u - cell_col * bin_x_) / bin_x_;
  const double wy = 1.0 - std::abs(v - cell_row * bin_y_) / bin_y_;
  const double base = control(cell_col, cell_row)(d);
  return base + ((1.0 - wx) * wy * (control(cell_col + 1, cell_row)(d) - base) +
                 wx * (1.0 - wy) * (control(cell_col, cell_row + 1)(d) - base) +
                 (1.0 - wx) * (1.0 - wy) * (control(cell_col + 1, cell_row + 1)(d) - base));
}

double UndistortionMap::undistortDepth(int u, int v, double d) const {
  if (!(d > 0.0)) {
    return 0.0;
  }
  // Offsets from the first control keep equal controls (identity included) exact.
  const auto cws = surrounding(u, v);
  const double base = control(cws[0].col, cws[0].row)(d);
  double delta = 0.0;
  for (std::size_t i = 1; i < cws.size(); ++i) {
    delta += cws[i].weight * (control(cws[i].col, cws[i].row)(d) - base);
  }
  return base + delta;
}

PolyFn completeDependentCorner(const PolyFn& g00, const PolyFn& gW0, const PolyFn& g0H) {
  if (g00.degree() != gW0.degree() || g00.degree() != g0H.degree()) {
    throw InvalidArgument("corner polynomials must share a degree");
  }
  std::vector<double> c(static_cast<std::size_t>(g00.degree() + 1));
  for (int i = 0; i <= g00.degree(); ++i) {
    c[static_cast<std::size_t>(i)] = gW0.coefficient(i) + g0H.coefficient(i) - g00.coefficient(i);
  }
  const bool constant_zero = g00.constantZero() && gW0.constantZero() && g0H.constantZero();
  return PolyFn(c, constant_zero);
}

GlobalMap::GlobalMap(int width, int height, int degree)
    : GlobalMap(width, height, PolyFn::identity(degree, true), PolyFn::identity(degree, true),
                PolyFn::identity(degree, true)) {}

GlobalMap::GlobalMap(int width, int height, const PolyFn& g00, const PolyFn& gW0,
                     const PolyFn& g0H)
    : width_(width), height_(height), g00_(g00), gW0_(gW0), g0H_(g0H) {
  if (width <= 0 || height <= 0) {
    throw InvalidArgument("global map dimensions must be positive");
  }
  if (!g00.constantZero() || !gW0.constantZero() || !g0H.constantZero()) {
    throw InvalidArgument("global map corners must have a zero constant term");
  }
  gWH_ = completeDependentCorner(g00_, gW0_, g0H_);
}

double GlobalMap::evaluate(double u, double v, double d) const {
  const double ax = u / width_;
  const double ay = v / height_;
  const double base = g00_(d);
  return base + ((ax * (1.0 - ay)) * (gW0_(d) - base) + ((1.0 - ax) * ay) * (g0H_(d) - base) +
                 (ax * ay) * (gWH_(d) - base));
}

namespace {

void requireSize(const UndistortionMap& map, int width, int height) {
  if (map.width() != width || map.height() != height) {
    throw InvalidArgument("image dimensions do not match the map");
  }
}

}  // namespace

DepthImage applyUndistortion(const UndistortionMap& map, const DepthImage& image, int threads) {
  requireSize(map, image.width, image.height);
  DepthImage out = image;
  parallelFor(0, image.height, threads, [&](int v) {
    for (int u = 0; u < image.width; ++u) {
      out.at(u, v) = map.undistortDepth(u, v, image.at(u, v));
    }
  });
  return out;
}

OrganizedCloud applyUndistortion(const UndistortionMap& map, const OrganizedCloud& cloud,
                                 int threads) {
  requireSize(map, cloud.width, cloud.height);
  OrganizedCloud out = cloud;
  parallelFor(0, cloud.height, threads, [&](int v) {
    for (int u = 0; u < cloud.width; ++u) {
      auto& p = out.at(u, v);
      if (!p || !(p->z() > 0.0)) {
        continue;
      }
      const double d = p->z();
      const double corrected = map.undistortDepth(u, v, d);
      *p *= corrected / d;
      p->z() = corrected;
    }
  });
  return out;
}

DepthImage correctDepth(const UndistortionMap& u_map, const GlobalMap& g_map,
                        const DepthImage& image, int threads) {
  requireSize(u_map, image.width, image.height);
  if (g_map.width() != image.width || g_map.height() != image.height) {
    throw InvalidArgument("image dimensions do not match the global map");
  }
  DepthImage out = image;
  parallelFor(0, image.height, threads, [&](int v) {
    for (int u = 0; u < image.width; ++u) {
      const double d = image.at(u, v);
      out.at(u, v) = d > 0.0 ? g_map.evaluate(u, v, u_map.undistortDepth(u, v, d)) : 0.0;
    }
  });
  return out;
}

OrganizedCloud applyFullCorrection(const UndistortionMap& u_map, const GlobalMap& g_map,
                                   const DepthImage& image, const CameraIntrinsics& intrinsics,
                                   int threads) {
  if (intrinsics.width != image.width || intrinsics.height != image.height) {
    throw InvalidArgument("image dimensions do not match the intrinsics");
  }
  const DepthImage corrected = correctDepth(u_map, g_map, image, threads);
  OrganizedCloud cloud(image.width, image.height);
  parallelFor(0, image.height, threads, [&](int v) {
    for (int u = 0; u < image.width; ++u) {
      const double d = corrected.at(u, v);
      if (d > 0.0) {
        cloud.at(u, v) = Vec3(d * (u - intrinsics.cx) / intrinsics.fx,
                              d * (v - intrinsics.cy) / intrinsics.fy, d);
      }
    }
  });
  return cloud;
}

}  // namespace depthcal
