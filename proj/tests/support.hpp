#pragma once

#include <vector>

#include "depthcal/synth.hpp"

namespace testsupport {

using namespace depthcal;

/// Default scene with noise off.
inline SceneSpec quietScene(bool distortion = true) {
  SceneSpec s = SceneSpec::defaults();
  s.noise_enabled = false;
  if (!distortion) {
    s.truth = GroundTruthDistortion::none(s.depth.width, s.depth.height);
  }
  return s;
}

/// Fronto-parallel training frames at the given wall distances.
inline std::vector<LabeledFrame> renderAt(SceneSpec& scene, const std::vector<double>& distances) {
  scene.poses.clear();
  for (double d : distances) {
    scene.poses.push_back(
        {RigidTransform(Eigen::Quaterniond::Identity(), Vec3(0.0, 0.0, -d)), false, d});
  }
  std::vector<LabeledFrame> out;
  for (std::size_t i = 0; i < distances.size(); ++i) out.push_back(renderFrame(scene, i));
  return out;
}

inline IndexSet labeled(const LabeledFrame& f, PixelLabel which) {
  IndexSet out;
  const int w = f.frame.depth.width;
  for (int v = 0; v < f.frame.depth.height; ++v) {
    for (int u = 0; u < w; ++u) {
      if (f.labels[static_cast<std::size_t>(v) * w + u] == which) out.push_back({u, v});
    }
  }
  return out;
}

inline std::vector<Frame> framesOf(const std::vector<LabeledFrame>& frames) {
  std::vector<Frame> out;
  for (const auto& f : frames) out.push_back(f.frame);
  return out;
}

}  // namespace testsupport
