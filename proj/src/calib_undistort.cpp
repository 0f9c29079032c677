#include "depthcal/calib_undistort.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "depthcal/errors.hpp"

namespace depthcal {

void CornerGrid::validate(int width, int height) const {
  if (rows <= 0 || cols <= 0 || points.size() != static_cast<std::size_t>(rows) * cols) {
    throw InvalidArgument("corner grid is incomplete");
  }
  for (const auto& p : points) {
    if (!p.allFinite() || p.x() < 0.0 || p.y() < 0.0 || p.x() > width - 1 ||
        p.y() > height - 1) {
      throw InvalidArgument("corner outside the RGB image");
    }
  }
}

void BoardSpec::validate() const {
  if (rows < 3 || cols < 3) {
    throw InvalidArgument("board needs at least 3x3 inner corners");
  }
  if (!(square > 0.0)) {
    throw InvalidArgument("board square size must be positive");
  }
}

std::vector<Vec3> BoardSpec::points() const {
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      out.push_back(corner(r, c));
    }
  }
  return out;
}

void UndistortConfig::validate() const {
  if (bin_x <= 0 || bin_y <= 0 || degree < 1 || degree > PolyFn::kMaxDegree ||
      ransac_iterations <= 0 || !(fit_radius > 0.0) || min_inliers <= 0 || max_planes <= 0 ||
      min_plane_points < 3 || competing_margin < 0.0 ||
      min_depth_gap < 0.0) {
    throw InvalidArgument("undistortion configuration values must be positive");
  }
  if (kappa < 1.0) {
    throw InvalidArgument("RANSAC threshold multiplier must be >= 1");
  }
}

FrameOrder sortFramesByDistance(std::span<const Frame> frames, const CameraIntrinsics& rgb,
                                const BoardSpec& board) {
  const std::vector<Vec3> object = board.points();
  FrameOrder result;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    try {
      frames[i].corners.validate(rgb.width, rgb.height);
      const PnPResult pnp = solvePnP(object, frames[i].corners.points, rgb);
      result.order.push_back({i, pnp.pose.translation().z(), pnp.pose});
    } catch (const Error& e) {
      result.warnings.push_back("frame " + frames[i].id + " dropped: " + e.what());
    }
  }
  std::stable_sort(result.order.begin(), result.order.end(),
                   [](const FrameDistance& a, const FrameDistance& b) {
                     return a.distance < b.distance;
                   });
  return result;
}

WallSeed wallSeedFromBoard(const RigidTransform& board_pose, const RigidTransform& camera_to_depth,
                           const BoardSpec& board) {
  const RigidTransform board_to_depth = camera_to_depth * board_pose;
  std::vector<Vec3> corners;
  double depth_sum = 0.0;
  for (const Vec3& p : board.points()) {
    corners.push_back(board_to_depth.apply(p));
    depth_sum += corners.back().z();
  }
  return {fitPlane(corners), depth_sum / static_cast<double>(corners.size())};
}

namespace {

struct PlaneCandidate {
  Plane plane;
  std::vector<int> members;
};

double normalAngleDeg(const Vec3& a, const Vec3& b) {
  return std::acos(std::clamp(std::abs(a.dot(b)), 0.0, 1.0)) * 180.0 / M_PI;
}

std::vector<int> withinThreshold(const std::vector<Vec3>& pts, const std::vector<int>& pool,
                                 const Plane& plane, double threshold) {
  std::vector<int> out;
  for (int i : pool) {
    if (std::abs(plane.signedDistance(pts[static_cast<std::size_t>(i)])) <= threshold) {
      out.push_back(i);
    }
  }
  return out;
}

Plane refitPlane(const std::vector<Vec3>& pts, const std::vector<int>& members) {
  std::vector<Vec3> sel;
  sel.reserve(members.size());
  for (int i : members) sel.push_back(pts[static_cast<std::size_t>(i)]);
  return fitPlane(sel);
}

// Planes whose normals differ by more than this are treated as different surfaces.
constexpr double kDistinctPlaneDeg = 45.0;
constexpr int kLocalWindow = 5;

struct PointGrid {
  const std::vector<Vec3>& pts;
  const std::vector<Pixel>& pix;
  std::vector<int> index;  ///< pixel -> point, -1 when invalid
  int width;
  int height;
};

// Best consensus plane among `pool`, refined once by least squares. Every other hypothesis
// is drawn from a small pixel window so that small surfaces get sampled too. Hypotheses
// within kDistinctPlaneDeg of `avoid` are skipped.
std::optional<PlaneCandidate> ransacPlane(const PointGrid& grid, const std::vector<int>& pool,
                                          double threshold, int iterations, std::mt19937_64& rng,
                                          const std::optional<Vec3>& avoid) {
  const std::vector<Vec3>& pts = grid.pts;
  if (pool.size() < 3) {
    return std::nullopt;
  }
  std::vector<char> in_pool(pts.size(), 0);
  for (int i : pool) in_pool[static_cast<std::size_t>(i)] = 1;
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::uniform_int_distribution<int> offset(-kLocalWindow, kLocalWindow);
  auto neighbour = [&](int a) {
    const Pixel& p = grid.pix[static_cast<std::size_t>(a)];
    for (int attempt = 0; attempt < 10; ++attempt) {
      const int u = p.u + offset(rng);
      const int v = p.v + offset(rng);
      if (u < 0 || v < 0 || u >= grid.width || v >= grid.height) continue;
      const int j = grid.index[static_cast<std::size_t>(v) * grid.width + u];
      if (j >= 0 && j != a && in_pool[static_cast<std::size_t>(j)]) return j;
    }
    return -1;
  };

  Plane best_plane;
  std::size_t best_count = 0;
  for (int it = 0; it < iterations; ++it) {
    const int ia = pool[pick(rng)];
    int ib, ic;
    if (it % 2 == 0) {
      ib = pool[pick(rng)];
      ic = pool[pick(rng)];
    } else {
      ib = neighbour(ia);
      ic = neighbour(ia);
      if (ib < 0 || ic < 0) continue;
    }
    // Thin triangles tilt freely about their long side and pick up whole image rows.
    const Pixel& pa = grid.pix[static_cast<std::size_t>(ia)];
    const Pixel& pb = grid.pix[static_cast<std::size_t>(ib)];
    const Pixel& pc = grid.pix[static_cast<std::size_t>(ic)];
    const long e1u = pb.u - pa.u, e1v = pb.v - pa.v, e2u = pc.u - pa.u, e2v = pc.v - pa.v;
    const long twice_area = std::abs(e1u * e2v - e1v * e2u);
    const long longest = std::max({e1u * e1u + e1v * e1v, e2u * e2u + e2v * e2v,
                                   (e2u - e1u) * (e2u - e1u) + (e2v - e1v) * (e2v - e1v)});
    if (2 * twice_area < longest) {
      continue;
    }
    const Vec3& a = pts[static_cast<std::size_t>(ia)];
    const Vec3 n = (pts[static_cast<std::size_t>(ib)] - a).cross(pts[static_cast<std::size_t>(ic)] - a);
    if (n.norm() < 1e-12) {
      continue;
    }
    const Plane plane = Plane::fromNormalOffset(n, n.dot(a));
    if (avoid && normalAngleDeg(plane.normal, *avoid) < kDistinctPlaneDeg) {
      continue;
    }
    std::size_t count = 0;
    for (int i : pool) {
      if (std::abs(plane.signedDistance(pts[static_cast<std::size_t>(i)])) <= threshold) {
        ++count;
      }
    }
    if (count > best_count) {
      best_count = count;
      best_plane = plane;
    }
  }
  if (best_count < 3) {
    return std::nullopt;
  }
  PlaneCandidate cand{best_plane, withinThreshold(pts, pool, best_plane, threshold)};
  try {
    const Plane refined = refitPlane(pts, cand.members);
    auto members = withinThreshold(pts, pool, refined, threshold);
    const bool drifted = avoid && normalAngleDeg(refined.normal, *avoid) < kDistinctPlaneDeg;
    if (!drifted && members.size() >= cand.members.size()) {
      cand = {refined, std::move(members)};
    }
  } catch (const DegenerateInput&) {
  }
  return cand;
}

}  // namespace

IndexSet selectWallPoints(const OrganizedCloud& undistorted, const WallSeed& seed,
                          const UndistortConfig& cfg, std::uint64_t rng_stream) {
  std::vector<Vec3> pts;
  std::vector<Pixel> pix;
  for (int v = 0; v < undistorted.height; ++v) {
    for (int u = 0; u < undistorted.width; ++u) {
      if (const auto& p = undistorted.at(u, v); p && p->z() > 0.0) {
        pts.push_back(*p);
        pix.push_back({u, v});
      }
    }
  }
  if (static_cast<int>(pts.size()) < cfg.min_inliers) {
    throw DegenerateInput("too few valid depth points for wall selection");
  }

  const double threshold = cfg.kappa * std::max(cfg.noise.sigma(seed.mean_depth), 1e-6);
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(rng_stream),
                    static_cast<std::uint32_t>(rng_stream >> 32)};
  std::mt19937_64 rng(seq);

  PointGrid grid{pts, pix, std::vector<int>(static_cast<std::size_t>(undistorted.width) *
                                                 undistorted.height, -1),
                 undistorted.width, undistorted.height};
  for (std::size_t i = 0; i < pix.size(); ++i) {
    grid.index[static_cast<std::size_t>(pix[i].v) * undistorted.width + pix[i].u] =
        static_cast<int>(i);
  }
  auto nearSeed = [&](const Plane& plane) {
    return normalAngleDeg(plane.normal, seed.plane.normal) < cfg.seed_max_angle_deg &&
           std::abs(plane.offset - seed.plane.offset) < cfg.seed_max_offset;
  };

  std::vector<int> remaining(pts.size());
  std::iota(remaining.begin(), remaining.end(), 0);
  std::vector<PlaneCandidate> planes;
  // Once a wall candidate exists, further planes must be different surfaces.
  std::optional<Vec3> wall_normal;
  for (int p = 0; p < cfg.max_planes; ++p) {
    auto cand = ransacPlane(grid, remaining, threshold, cfg.ransac_iterations, rng, wall_normal);
    if (!cand || static_cast<int>(cand->members.size()) < cfg.min_plane_points) {
      break;
    }
    if (!wall_normal && nearSeed(cand->plane)) wall_normal = cand->plane.normal;
    std::vector<char> taken(pts.size(), 0);
    for (int i : cand->members) taken[static_cast<std::size_t>(i)] = 1;
    std::erase_if(remaining, [&](int i) { return taken[static_cast<std::size_t>(i)] != 0; });
    planes.push_back(std::move(*cand));
  }

  int wall = -1;
  double best_score = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < planes.size(); ++i) {
    if (nearSeed(planes[i].plane)) {
      const double angle = normalAngleDeg(planes[i].plane.normal, seed.plane.normal);
      const double offset = std::abs(planes[i].plane.offset - seed.plane.offset);
      const double score = angle / cfg.seed_max_angle_deg + offset / cfg.seed_max_offset;
      if (score < best_score) {
        best_score = score;
        wall = static_cast<int>(i);
      }
    }
  }
  if (wall < 0) {
    throw DegenerateInput("no consensus plane near the checkerboard plane");
  }

  // Points near another, clearly different plane belong to that plane.
  std::vector<Plane> others;
  for (std::size_t i = 0; i < planes.size(); ++i) {
    if (static_cast<int>(i) != wall &&
        normalAngleDeg(planes[i].plane.normal, planes[static_cast<std::size_t>(wall)].plane.normal) >
            kDistinctPlaneDeg) {
      others.push_back(planes[i].plane);
    }
  }
  std::vector<int> all(pts.size());
  std::iota(all.begin(), all.end(), 0);
  auto assign = [&](const Plane& wall_plane) {
    std::vector<int> members;
    for (int i : all) {
      const Vec3& x = pts[static_cast<std::size_t>(i)];
      const double d = std::abs(wall_plane.signedDistance(x));
      if (d > threshold) continue;
      const bool closer_elsewhere = std::any_of(others.begin(), others.end(), [&](const Plane& o) {
        return std::abs(o.signedDistance(x)) < std::max(d, cfg.competing_margin * threshold);
      });
      if (!closer_elsewhere) members.push_back(i);
    }
    return members;
  };
  std::vector<int> members = assign(planes[static_cast<std::size_t>(wall)].plane);
  if (members.size() >= 3) {
    try {
      members = assign(refitPlane(pts, members));
    } catch (const DegenerateInput&) {
    }
  }
  if (static_cast<int>(members.size()) < cfg.min_inliers) {
    throw DegenerateInput("too few wall inliers");
  }

  IndexSet out;
  out.reserve(members.size());
  for (int i : members) out.push_back(pix[static_cast<std::size_t>(i)]);
  return out;
}

IndexSet selectWallPoints(const OrganizedCloud& undistorted, const CornerGrid& corners,
                          const RigidTransform& camera_to_depth, const CameraIntrinsics& rgb,
                          const BoardSpec& board, const UndistortConfig& cfg,
                          std::uint64_t rng_stream) {
  const PnPResult pnp = solvePnP(board.points(), corners.points, rgb);
  return selectWallPoints(undistorted, wallSeedFromBoard(pnp.pose, camera_to_depth, board), cfg,
                          rng_stream);
}

Plane fitReferencePlane(const OrganizedCloud& original, const IndexSet& inliers,
                        const UndistortConfig& cfg) {
  if (inliers.empty()) {
    throw InvalidArgument("reference plane needs a non-empty inlier set");
  }
  double cu = 0.0;
  double cv = 0.0;
  for (const auto& px : inliers) {
    cu += px.u;
    cv += px.v;
  }
  cu /= static_cast<double>(inliers.size());
  cv /= static_cast<double>(inliers.size());
  const double r2 = cfg.fit_radius * cfg.fit_radius;
  std::vector<Vec3> pts;
  for (const auto& px : inliers) {
    const double du = px.u - cu;
    const double dv = px.v - cv;
    if (du * du + dv * dv <= r2) {
      if (const auto& p = original.at(px.u, px.v)) {
        pts.push_back(*p);
      }
    }
  }
  if (pts.size() < 3) {
    throw DegenerateInput("fewer than 3 points inside the fit radius");
  }
  return fitPlane(pts);
}

int resolvableDepths(std::span<const DepthSample> samples, const NoiseModel& noise,
                     double min_gap) {
  std::vector<double> z;
  z.reserve(samples.size());
  for (const DepthSample& s : samples) z.push_back(s.z);
  std::sort(z.begin(), z.end());
  int count = 0;
  double last = -std::numeric_limits<double>::infinity();
  for (double v : z) {
    if (v - last > std::max({noise.sigma(v), min_gap, 1e-5})) {
      ++count;
      last = v;
    }
  }
  return count;
}

MapUpdateStats updateMap(UndistortionMap& map, std::vector<SampleSet>& samples,
                         const OrganizedCloud& original, const IndexSet& inliers,
                         const Plane& plane, const NoiseModel& noise, bool constant_zero,
                         double min_gap) {
  const std::size_t controls = static_cast<std::size_t>(map.cols()) * map.rows();
  if (samples.size() != controls) {
    throw InvalidArgument("sample grid does not match the map");
  }
  if (original.width != map.width() || original.height != map.height()) {
    throw InvalidArgument("cloud dimensions do not match the map");
  }
  std::vector<double> w_sum(controls, 0.0);
  std::vector<double> wz_sum(controls, 0.0);
  std::vector<double> wzp_sum(controls, 0.0);
  for (const auto& px : inliers) {
    const auto& p = original.at(px.u, px.v);
    if (!p) {
      continue;
    }
    const Vec3 projected = losProject(*p, plane);
    for (const auto& cw : map.surrounding(px.u, px.v)) {
      if (cw.weight <= 0.0) continue;
      const std::size_t k = static_cast<std::size_t>(cw.row) * map.cols() + cw.col;
      w_sum[k] += cw.weight;
      wz_sum[k] += cw.weight * p->z();
      wzp_sum[k] += cw.weight * projected.z();
    }
  }

  MapUpdateStats stats;
  for (int row = 0; row < map.rows(); ++row) {
    for (int col = 0; col < map.cols(); ++col) {
      const std::size_t k = static_cast<std::size_t>(row) * map.cols() + col;
      if (!(w_sum[k] > 0.0)) continue;
      ++stats.touched;
      samples[k].push_back({wz_sum[k] / w_sum[k], wzp_sum[k] / w_sum[k]});
      // Depths closer than the noise floor cannot constrain curvature, so the degree
      // grows with the number of resolvable depths.
      const int first = constant_zero ? 1 : 0;
      const int degree = std::min(map.degree(), resolvableDepths(samples[k], noise, min_gap) - 1 + first);
      if (degree < 1) continue;
      try {
        const PolyFn fit = fitWeightedPoly(samples[k], noise, degree, constant_zero);
        std::vector<double> padded(static_cast<std::size_t>(map.degree()) + 1, 0.0);
        for (int i = 0; i <= degree; ++i) padded[static_cast<std::size_t>(i)] = fit.coefficient(i);
        map.setControl(col, row, PolyFn(padded, constant_zero));
        ++stats.refit;
      } catch (const DegenerateInput&) {
        // Keep the previous function.
      }
    }
  }
  return stats;
}

UndistortionResult estimateUndistortionMap(std::span<const Frame> frames,
                                           const RigidTransform& camera_to_depth,
                                           const CameraIntrinsics& rgb,
                                           const CameraIntrinsics& depth,
                                           const BoardSpec& board, const UndistortConfig& cfg) {
  cfg.validate();
  board.validate();
  depth.validate();
  UndistortionResult result;
  result.map = UndistortionMap(depth.width, depth.height, cfg.bin_x, cfg.bin_y, cfg.degree);
  result.samples.assign(static_cast<std::size_t>(result.map.cols()) * result.map.rows(), {});

  FrameOrder order = sortFramesByDistance(frames, rgb, board);
  result.warnings = std::move(order.warnings);

  for (std::size_t step = 0; step < order.order.size(); ++step) {
    const FrameDistance& fd = order.order[step];
    const Frame& frame = frames[fd.index];
    try {
      const OrganizedCloud original = depthToCloud(frame.depth, depth);
      const OrganizedCloud undistorted = applyUndistortion(result.map, original, cfg.threads);
      const WallSeed seed = wallSeedFromBoard(fd.board_pose, camera_to_depth, board);
      IndexSet inliers = selectWallPoints(undistorted, seed, cfg, fd.index);
      const Plane reference = fitReferencePlane(original, inliers, cfg);
      updateMap(result.map, result.samples, original, inliers, reference, cfg.noise, false,
                cfg.min_depth_gap);
      result.frames.push_back({fd.index, fd.distance, fd.board_pose, std::move(inliers), reference});
    } catch (const Error& e) {
      result.warnings.push_back("frame " + frame.id + " dropped: " + e.what());
    }
  }
  if (static_cast<int>(result.frames.size()) < cfg.degree + 1) {
    throw DegenerateInput("too few usable frames to estimate the undistortion map");
  }
  return result;
}

}  // namespace depthcal
