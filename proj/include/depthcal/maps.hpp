#pragma once

#include <array>
#include <span>
#include <vector>

#include "depthcal/geometry.hpp"

namespace depthcal {

/// Polynomial of depth, meters -> meters, degree <= 4. With constant_zero the
/// constant coefficient is pinned to exactly 0.
class PolyFn {
 public:
  static constexpr int kMaxDegree = 4;

  /// Identity (0, 1).
  PolyFn() = default;
  explicit PolyFn(std::span<const double> coefficients, bool constant_zero = false);
  PolyFn(std::initializer_list<double> coefficients, bool constant_zero = false);

  /// (0, 1, 0, ...) padded to `degree`.
  static PolyFn identity(int degree = 1, bool constant_zero = false);

  int degree() const { return degree_; }
  bool constantZero() const { return constant_zero_; }
  double coefficient(int i) const { return coeffs_[static_cast<std::size_t>(i)]; }
  std::span<const double> coefficients() const {
    return {coeffs_.data(), static_cast<std::size_t>(degree_ + 1)};
  }

  double operator()(double z) const {
    double acc = coeffs_[static_cast<std::size_t>(degree_)];
    for (int i = degree_ - 1; i >= 0; --i) {
      acc = acc * z + coeffs_[static_cast<std::size_t>(i)];
    }
    return acc;
  }

  friend bool operator==(const PolyFn&, const PolyFn&) = default;

 private:
  std::array<double, kMaxDegree + 1> coeffs_{0.0, 1.0, 0.0, 0.0, 0.0};
  int degree_ = 1;
  bool constant_zero_ = false;
};

inline double polyEval(const PolyFn& f, double z) { return f(z); }

/// One aggregated (z, z_plane) pair of a control pixel.
struct DepthSample {
  double z = 0.0;
  double z_plane = 0.0;
};

/// Per-frame contribution of one pixel to a control pixel.
struct WeightedSample {
  double w = 0.0;
  double z = 0.0;
  double z_plane = 0.0;
};

using SampleSet = std::vector<DepthSample>;

/// Minimizes sum (f(z) - z_plane)^2 / sigma(z)^2 over the polynomial coefficients.
/// Throws DegenerateInput when fewer distinct depths than unknowns are available or
/// the weighted design matrix is rank deficient.
PolyFn fitWeightedPoly(std::span<const DepthSample> samples, const NoiseModel& noise, int degree,
                       bool constant_zero);

/// Weighted mean (z̄, z̄_plane) of one control pixel's per-frame contributions.
/// Returns nullopt when the total weight is zero.
std::optional<DepthSample> weightedMean(std::span<const WeightedSample> samples);

struct ControlWeight {
  int col = 0;  ///< control grid column
  int row = 0;  ///< control grid row
  int s = 0;    ///< control pixel u coordinate
  int t = 0;    ///< control pixel v coordinate
  double weight = 0.0;
};

/// Binned undistortion map: correction functions at control pixels (i*bin_x, j*bin_y),
/// i = 0..ceil(W/bin_x), j = 0..ceil(H/bin_y); every other pixel blends its four
/// surrounding control functions bilinearly.
class UndistortionMap {
 public:
  UndistortionMap() = default;
  /// All control functions start as identity of the given degree.
  UndistortionMap(int width, int height, int bin_x, int bin_y, int degree = 2);

  int width() const { return width_; }
  int height() const { return height_; }
  int binX() const { return bin_x_; }
  int binY() const { return bin_y_; }
  int degree() const { return degree_; }
  int cols() const { return cols_; }
  int rows() const { return rows_; }

  const PolyFn& control(int col, int row) const {
    return controls_[static_cast<std::size_t>(row) * cols_ + col];
  }
  void setControl(int col, int row, const PolyFn& f);

  /// The four control pixels around (u, v) with their bilinear weights. Throws
  /// InvalidArgument when the pixel is outside the image.
  std::array<ControlWeight, 4> surrounding(int u, int v) const;

  /// Blend of the four control functions of cell (cell_col, cell_row) at a continuous
  /// position; lets callers compare neighbouring cells on their shared edge.
  double evaluateInCell(int cell_col, int cell_row, double u, double v, double d) const;

  /// Corrected depth at pixel (u, v); invalid (<= 0) depths stay 0.
  double undistortDepth(int u, int v, double d) const;

  friend bool operator==(const UndistortionMap&, const UndistortionMap&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int bin_x_ = 1;
  int bin_y_ = 1;
  int degree_ = 2;
  int cols_ = 0;
  int rows_ = 0;
  std::vector<PolyFn> controls_;
};

/// Dependent corner satisfying g00 + gWH = gW0 + g0H coefficient-wise.
PolyFn completeDependentCorner(const PolyFn& g00, const PolyFn& gW0, const PolyFn& g0H);

/// Four-corner global correction map. Three corners are free, the fourth is always
/// rebuilt from them, so the blended correction over the image is affine in (u, v)
/// for any fixed depth.
class GlobalMap {
 public:
  GlobalMap() = default;
  /// Identity corners of the given degree (constant terms pinned to zero).
  GlobalMap(int width, int height, int degree = 2);
  GlobalMap(int width, int height, const PolyFn& g00, const PolyFn& gW0, const PolyFn& g0H);

  int width() const { return width_; }
  int height() const { return height_; }
  int degree() const { return g00_.degree(); }
  const PolyFn& corner00() const { return g00_; }
  const PolyFn& cornerW0() const { return gW0_; }
  const PolyFn& corner0H() const { return g0H_; }
  const PolyFn& cornerWH() const { return gWH_; }

  double evaluate(double u, double v, double d) const;

  friend bool operator==(const GlobalMap&, const GlobalMap&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  PolyFn g00_ = PolyFn::identity(2, true);
  PolyFn gW0_ = PolyFn::identity(2, true);
  PolyFn g0H_ = PolyFn::identity(2, true);
  PolyFn gWH_ = PolyFn::identity(2, true);
};

inline double globalEval(const GlobalMap& g, double u, double v, double d) {
  return g.evaluate(u, v, d);
}

/// Depth image with every valid depth replaced by u(d).
DepthImage applyUndistortion(const UndistortionMap& map, const DepthImage& image,
                             int threads = 1);
/// Cloud with every valid point scaled along its line of sight by u(d)/d.
OrganizedCloud applyUndistortion(const UndistortionMap& map, const OrganizedCloud& cloud,
                                 int threads = 1);

/// Per-pixel g(u(d)).
DepthImage correctDepth(const UndistortionMap& u_map, const GlobalMap& g_map,
                        const DepthImage& image, int threads = 1);

/// Corrected depths back-projected with `intrinsics`.
OrganizedCloud applyFullCorrection(const UndistortionMap& u_map, const GlobalMap& g_map,
                                   const DepthImage& image, const CameraIntrinsics& intrinsics,
                                   int threads = 1);

}  // namespace depthcal
