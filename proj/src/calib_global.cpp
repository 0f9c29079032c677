#include "depthcal/calib_global.hpp"

#include <algorithm>
#include <cmath>

#include "depthcal/errors.hpp"
#include "depthcal/pnp.hpp"

namespace depthcal {

void GlobalConfig::validate() const {
  if (!(sigma_corner > 0.0)) {
    throw InvalidArgument("corner sigma must be positive");
  }
  if (degree < 1 || degree > PolyFn::kMaxDegree) {
    throw InvalidArgument("global map degree must be between 1 and 4");
  }
  if (init_stride < 1) {
    throw InvalidArgument("initialization stride must be >= 1");
  }
  if (pixel_stride < 1) {
    throw InvalidArgument("pixel stride must be >= 1");
  }
}

namespace {

Plane boardPlaneInDepth(const RigidTransform& camera_to_depth, const RigidTransform& board_pose,
                        std::span<const Vec3> board_points) {
  const RigidTransform board_to_depth = camera_to_depth * board_pose;
  std::vector<Vec3> pts;
  pts.reserve(board_points.size());
  for (const Vec3& p : board_points) pts.push_back(board_to_depth.apply(p));
  return fitPlane(pts);
}

struct PosSample {
  int u;
  int v;
  double z;
  double weight;
};

std::vector<PosSample> posSamples(const FrameObservation& frame, const GlobalConfig& cfg) {
  std::vector<PosSample> out;
  for (const Pixel& px : frame.inliers) {
    if (px.u % cfg.pixel_stride != 0 || px.v % cfg.pixel_stride != 0) continue;
    const double z = frame.undistorted.at(px.u, px.v);
    if (z > 0.0) out.push_back({px.u, px.v, z, 0.0});
  }
  if (out.empty()) {
    throw InvalidArgument("frame " + frame.id + " has no usable wall inliers");
  }
  const double norm = std::sqrt(static_cast<double>(out.size()));
  for (auto& s : out) {
    s.weight = 1.0 / (norm * std::max(cfg.sigma_undistorted.sigma(s.z), 1e-6));
  }
  return out;
}

template <typename Samples>
void posResiduals(const Samples& samples, const Plane& plane, const CameraIntrinsics& k,
                  const GlobalMap& g, double* out) {
  std::size_t i = 0;
  for (const auto& s : samples) {
    const double corrected = g.evaluate(s.u, s.v, s.z);
    const Vec3 p(corrected * (s.u - k.cx) / k.fx, corrected * (s.v - k.cy) / k.fy, corrected);
    out[i++] = plane.signedDistance(p) * s.weight;
  }
}

void reprResiduals(const CornerGrid& corners, const RigidTransform& pose,
                   const CameraIntrinsics& rgb, std::span<const Vec3> board_points,
                   double sigma_corner, double* out) {
  for (std::size_t i = 0; i < board_points.size(); ++i) {
    const Vec3 pc = pose.apply(board_points[i]);
    if (!(pc.z() > 0.0)) {
      throw InvalidArgument("board corner behind the camera");
    }
    const Vec2 diff = (projectPoint(rgb, pc) - corners.points[i]) / sigma_corner;
    out[2 * i] = diff.x();
    out[2 * i + 1] = diff.y();
  }
}

}  // namespace

GlobalInit initGlobal(std::span<const FrameObservation> frames, const CameraIntrinsics& rgb,
                      const CameraIntrinsics& depth, const BoardSpec& board,
                      const GlobalConfig& cfg) {
  cfg.validate();
  const std::vector<Vec3> object = board.points();
  GlobalInit init;
  std::vector<OrganizedCloud> clouds;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const FrameObservation& f = frames[k];
    try {
      const PnPResult pnp = solvePnP(object, f.corners.points, rgb);
      std::vector<Vec3> board_cam;
      for (const Vec3& p : object) board_cam.push_back(pnp.pose.apply(p));
      const Plane camera_plane = fitPlane(board_cam);

      OrganizedCloud cloud = depthToCloud(f.undistorted, depth);
      std::vector<Vec3> wall;
      for (const Pixel& px : f.inliers) {
        if (const auto& p = cloud.at(px.u, px.v)) wall.push_back(*p);
      }
      const Plane depth_plane = fitPlane(wall);

      init.used.push_back(k);
      init.camera_planes.push_back(camera_plane);
      init.depth_planes.push_back(depth_plane);
      init.state.board_poses.push_back(pnp.pose);
      clouds.push_back(std::move(cloud));
    } catch (const Error& e) {
      init.warnings.push_back("frame " + f.id + " dropped: " + e.what());
    }
  }
  if (init.used.size() < 3) {
    throw DegenerateInput("global initialization needs at least 3 usable frames");
  }
  init.state.depth_intrinsics = depth;

  // Corner functions fitted like the undistortion map, with one bin spanning the image.
  auto fitCorners = [&](const RigidTransform& camera_to_depth) {
    UndistortionMap corners(depth.width, depth.height, depth.width, depth.height, cfg.degree);
    std::vector<SampleSet> samples(static_cast<std::size_t>(corners.cols()) * corners.rows());
    for (std::size_t i = 0; i < init.used.size(); ++i) {
      const FrameObservation& f = frames[init.used[i]];
      const Plane target = transformPlane(camera_to_depth, init.camera_planes[i]);
      updateMap(corners, samples, clouds[i], f.inliers, target, cfg.sigma_undistorted, true);
    }
    auto corner = [&](int col, int row) {
      const PolyFn& fn = corners.control(col, row);
      return fn.constantZero() ? fn : PolyFn::identity(cfg.degree, true);
    };
    return GlobalMap(depth.width, depth.height, corner(0, 0), corner(1, 0), corner(0, 1));
  };

  init.state.camera_to_depth =
      estimateTransformFromPlanes(init.camera_planes, init.depth_planes);
  init.state.global_map = fitCorners(init.state.camera_to_depth);
  if (!cfg.init_joint) {
    return init;
  }

  // A depth bias leaks into the plane-based extrinsic. Polish extrinsic and map together on
  // the distances of corrected wall points to the board planes.
  struct WallSample {
    int u;
    int v;
    Vec3 p;
    double weight;
  };
  std::vector<std::vector<WallSample>> walls(init.used.size());
  std::size_t total = 0;
  for (std::size_t i = 0; i < init.used.size(); ++i) {
    for (const Pixel& px : frames[init.used[i]].inliers) {
      if (px.u % cfg.init_stride != 0 || px.v % cfg.init_stride != 0) continue;
      if (const auto& p = clouds[i].at(px.u, px.v)) walls[i].push_back({px.u, px.v, *p, 0.0});
    }
    const double norm = std::sqrt(static_cast<double>(std::max<std::size_t>(walls[i].size(), 1)));
    for (auto& w : walls[i]) {
      w.weight = 1.0 / (norm * std::max(cfg.sigma_undistorted.sigma(w.p.z()), 1e-6));
    }
    total += walls[i].size();
  }
  const RigidTransform t0 = init.state.camera_to_depth;
  const int d = cfg.degree;
  auto unpackMap = [&](const Eigen::VectorXd& x) {
    auto corner = [&](int c) {
      std::vector<double> coeffs(static_cast<std::size_t>(d + 1), 0.0);
      for (int k = 1; k <= d; ++k) coeffs[static_cast<std::size_t>(k)] = x[6 + c * d + k - 1];
      return PolyFn(coeffs, true);
    };
    return GlobalMap(depth.width, depth.height, corner(0), corner(1), corner(2));
  };
  auto residuals = [&](const Eigen::VectorXd& x) {
    const RigidTransform t = t0.plus(x.segment<3>(0), x.segment<3>(3));
    const GlobalMap gm = unpackMap(x);
    Eigen::VectorXd r(static_cast<Eigen::Index>(total));
    Eigen::Index at = 0;
    for (std::size_t i = 0; i < walls.size(); ++i) {
      const Plane target = transformPlane(t, init.camera_planes[i]);
      for (const WallSample& w : walls[i]) {
        const Vec3 p = w.p * (gm.evaluate(w.u, w.v, w.p.z()) / w.p.z());
        r[at++] = target.signedDistance(p) * w.weight;
      }
    }
    return r;
  };
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(6 + 3 * d);
  const GlobalMap& g0 = init.state.global_map;
  const PolyFn* corners0[3] = {&g0.corner00(), &g0.cornerW0(), &g0.corner0H()};
  for (int c = 0; c < 3; ++c) {
    for (int k = 1; k <= d; ++k) x0[6 + c * d + k - 1] = corners0[c]->coefficient(k);
  }
  LmOptions lm = cfg.lm;
  lm.on_accept = {};
  const LmResult res = lmMinimize(residuals, x0, lm);
  if (res.final_cost < res.initial_cost) {
    init.state.camera_to_depth = t0.plus(res.x.segment<3>(0), res.x.segment<3>(3));
    init.state.global_map = unpackMap(res.x);
  }
  return init;
}

Eigen::VectorXd residualRepr(const CornerGrid& corners, const RigidTransform& board_pose,
                             const CameraIntrinsics& rgb, const BoardSpec& board,
                             double sigma_corner) {
  const std::vector<Vec3> object = board.points();
  if (corners.points.size() != object.size()) {
    throw InvalidArgument("corner grid does not match the board");
  }
  Eigen::VectorXd r(static_cast<Eigen::Index>(2 * object.size()));
  reprResiduals(corners, board_pose, rgb, object, sigma_corner, r.data());
  return r;
}

Eigen::VectorXd residualPos(const FrameObservation& frame, const RefinementState& state,
                            std::size_t frame_index, const BoardSpec& board,
                            const GlobalConfig& cfg) {
  const std::vector<Vec3> object = board.points();
  const Plane plane =
      boardPlaneInDepth(state.camera_to_depth, state.board_poses.at(frame_index), object);
  const auto samples = posSamples(frame, cfg);
  Eigen::VectorXd r(static_cast<Eigen::Index>(samples.size()));
  posResiduals(samples, plane, state.depth_intrinsics, state.global_map, r.data());
  return r;
}

RefinementProblem::RefinementProblem(std::span<const FrameObservation> frames,
                                     const CameraIntrinsics& rgb, const CameraIntrinsics& depth,
                                     const BoardSpec& board, const GlobalConfig& cfg)
    : frames_(frames),
      rgb_(rgb),
      board_(board),
      cfg_(cfg),
      depth_template_(depth),
      width_(depth.width),
      height_(depth.height),
      degree_(cfg.degree),
      board_points_(board.points()) {
  cfg.validate();
  tangent_size_ = 10 + 3 * degree_ + 6 * static_cast<int>(frames.size());
  for (std::size_t k = 0; k < frames.size(); ++k) {
    std::vector<int> params{0, 1, 2, 3, 4, 5};
    if (cfg.refine_intrinsics) {
      for (int i = 6; i < 10; ++i) params.push_back(i);
    }
    if (cfg.refine_global_map) {
      for (int i = 0; i < 3 * degree_; ++i) params.push_back(globalOffsetTangent() + i);
    }
    for (int i = 0; i < 6; ++i) params.push_back(poseOffsetTangent(k) + i);
    block_params_.push_back(std::move(params));

    std::vector<Sample> s;
    for (const auto& p : posSamples(frames[k], cfg)) s.push_back({p.u, p.v, p.z, p.weight});
    samples_.push_back(std::move(s));
  }
}

Eigen::VectorXd RefinementProblem::pack(const RefinementState& state) const {
  Eigen::VectorXd x(11 + 3 * degree_ + 7 * static_cast<int>(state.board_poses.size()));
  auto put_pose = [&](int at, const RigidTransform& t) {
    const auto& q = t.rotation();
    x.segment<7>(at) << q.w(), q.x(), q.y(), q.z(), t.translation().x(), t.translation().y(),
        t.translation().z();
  };
  put_pose(0, state.camera_to_depth);
  const auto& k = state.depth_intrinsics;
  x.segment<4>(7) << k.fx, k.fy, k.cx, k.cy;
  const PolyFn* corners[3] = {&state.global_map.corner00(), &state.global_map.cornerW0(),
                              &state.global_map.corner0H()};
  for (int c = 0; c < 3; ++c) {
    for (int i = 1; i <= degree_; ++i) x[11 + c * degree_ + (i - 1)] = corners[c]->coefficient(i);
  }
  for (std::size_t b = 0; b < state.board_poses.size(); ++b) {
    put_pose(poseOffsetAmbient(b), state.board_poses[b]);
  }
  return x;
}

namespace {

RigidTransform poseAt(const Eigen::VectorXd& x, int at) {
  return {Eigen::Quaterniond(x[at], x[at + 1], x[at + 2], x[at + 3]),
          Vec3(x[at + 4], x[at + 5], x[at + 6])};
}

GlobalMap globalAt(const Eigen::VectorXd& x, int degree, int width, int height) {
  auto corner = [&](int c) {
    std::vector<double> coeffs(static_cast<std::size_t>(degree + 1), 0.0);
    for (int i = 1; i <= degree; ++i) coeffs[static_cast<std::size_t>(i)] = x[11 + c * degree + i - 1];
    return PolyFn(coeffs, true);
  };
  return GlobalMap(width, height, corner(0), corner(1), corner(2));
}

}  // namespace

RefinementState RefinementProblem::unpack(const Eigen::VectorXd& x) const {
  RefinementState state;
  state.camera_to_depth = poseAt(x, 0);
  state.depth_intrinsics = depth_template_;
  state.depth_intrinsics.fx = x[7];
  state.depth_intrinsics.fy = x[8];
  state.depth_intrinsics.cx = x[9];
  state.depth_intrinsics.cy = x[10];
  state.global_map = globalAt(x, degree_, width_, height_);
  for (std::size_t b = 0; b < frames_.size(); ++b) {
    state.board_poses.push_back(poseAt(x, poseOffsetAmbient(b)));
  }
  return state;
}

void RefinementProblem::evaluateBlock(int block, const Eigen::VectorXd& x,
                                      Eigen::VectorXd& residuals) const {
  const auto k = static_cast<std::size_t>(block);
  const RigidTransform extrinsic = poseAt(x, 0);
  const RigidTransform pose = poseAt(x, poseOffsetAmbient(k));
  CameraIntrinsics intr = depth_template_;
  intr.fx = x[7];
  intr.fy = x[8];
  intr.cx = x[9];
  intr.cy = x[10];
  const GlobalMap g = globalAt(x, degree_, width_, height_);

  const auto n_repr = static_cast<Eigen::Index>(2 * board_points_.size());
  residuals.resize(n_repr + static_cast<Eigen::Index>(samples_[k].size()));
  reprResiduals(frames_[k].corners, pose, rgb_, board_points_, cfg_.sigma_corner,
                residuals.data());
  const Plane plane = boardPlaneInDepth(extrinsic, pose, board_points_);
  posResiduals(samples_[k], plane, intr, g, residuals.data() + n_repr);
}

Eigen::VectorXd RefinementProblem::plus(const Eigen::VectorXd& x,
                                        const Eigen::VectorXd& delta) const {
  Eigen::VectorXd out = x;
  auto update_pose = [&](int ambient, int tangent) {
    const RigidTransform t = poseAt(x, ambient).plus(delta.segment<3>(tangent),
                                                     delta.segment<3>(tangent + 3));
    const auto& q = t.rotation();
    out.segment<7>(ambient) << q.w(), q.x(), q.y(), q.z(), t.translation().x(),
        t.translation().y(), t.translation().z();
  };
  update_pose(0, 0);
  out.segment<4>(7) += delta.segment<4>(6);
  out.segment(11, 3 * degree_) += delta.segment(globalOffsetTangent(), 3 * degree_);
  for (std::size_t b = 0; b < frames_.size(); ++b) {
    update_pose(poseOffsetAmbient(b), poseOffsetTangent(b));
  }
  return out;
}

double RefinementProblem::stepScale(const Eigen::VectorXd& x, int index) const {
  if (index < 3) return 0.0;
  if (index < 6) return std::abs(x[4 + (index - 3)]);
  if (index < 10) return std::abs(x[7 + (index - 6)]);
  if (index < globalOffsetTangent() + 3 * degree_) {
    return std::abs(x[11 + (index - globalOffsetTangent())]);
  }
  const int rel = index - (globalOffsetTangent() + 3 * degree_);
  const int pose = rel / 6;
  const int local = rel % 6;
  if (local < 3) return 0.0;
  return std::abs(x[poseOffsetAmbient(static_cast<std::size_t>(pose)) + 4 + (local - 3)]);
}

RefineResult refine(const RefinementState& initial, std::span<const FrameObservation> frames,
                    const CameraIntrinsics& rgb, const BoardSpec& board, const GlobalConfig& cfg) {
  if (initial.board_poses.size() != frames.size()) {
    throw InvalidArgument("one board pose per frame is required");
  }
  const RefinementProblem problem(frames, rgb, initial.depth_intrinsics, board, cfg);
  const Eigen::VectorXd x0 = problem.pack(initial);
  RefineResult result;
  result.lm = lmMinimize(problem, x0, cfg.lm);
  result.state = problem.unpack(result.lm.x);
  return result;
}

}  // namespace depthcal
