#pragma once

// Flow feature assembly (trajectory rows -> token matrix for attention) and
// static feature sampling. Each trajectory entry tau contributes one token:
// the frame-tau encoder feature sampled at the projected position, followed
// by the embedded displacement (mode-dependent).

#include <map>

#include "semflow/camera.hpp"
#include "semflow/field/encoder.hpp"
#include "semflow/field/flow_field.hpp"

namespace sf {

// Per-iteration cache of encoded frames, keyed by 1-based frame time.
template <class T>
using FrameCache = std::map<int, EncodedFrame<T>>;

template <class T>
Var<T> project_to_pixels(const Var<T>& points, const CameraPose& pose) {
  Mat<T> rot = pose.rotation.template cast<T>();
  Vec<T> center = pose.translation.template cast<T>();
  Var<T> proj = pinhole_project(points, rot, center, static_cast<T>(pose.fx),
                                static_cast<T>(pose.fy), static_cast<T>(pose.cx),
                                static_cast<T>(pose.cy));
  return slice_cols(proj, 0, 2);
}

// Encoder feature of `points` (Sx3) seen in frame `tau`.
template <class T>
Var<T> dynamic_feature_at(const ParamBlock<T>& enc_block, const std::string& prefix,
                          const FrameCache<T>& cache, const std::vector<CameraPose>& poses,
                          const Var<T>& points, int tau) {
  auto it = cache.find(tau);
  require(it != cache.end(), "dynamic_feature_at: frame not encoded");
  Var<T> coords = project_to_pixels(points, poses[static_cast<size_t>(tau - 1)]);
  return sample_encoded(enc_block, prefix, it->second, coords);
}

// Number of columns one flow-feature token occupies.
inline Index flow_token_width(const ModelConfig& cfg) {
  Index delta_cols = 3 * (1 + 2 * cfg.disp_freqs);
  Index abs_cols = 3 * (1 + 2 * cfg.pos_freqs);
  switch (cfg.disp_mode) {
    case DispMode::Delta: return cfg.feature_dim + delta_cols;
    case DispMode::Abs: return cfg.feature_dim + abs_cols;
    case DispMode::Both: return cfg.feature_dim + delta_cols + abs_cols;
  }
  return 0;
}

// Token matrix: (S*G)xK with the G=2W+1 trajectory rows of each sample
// contiguous in ascending-time order.
template <class T>
Var<T> assemble_flow_features(const ParamBlock<T>& enc_block, const std::string& prefix,
                              const FrameCache<T>& cache, const std::vector<CameraPose>& poses,
                              const ModelConfig& cfg, const TrajectoryBatch<T>& traj,
                              const Var<T>& anchor_x) {
  std::vector<Var<T>> rows;
  for (size_t k = 0; k < traj.times.size(); ++k) {
    Var<T> feat = dynamic_feature_at(enc_block, prefix, cache, poses, traj.positions[k],
                                     traj.times[k]);
    std::vector<Var<T>> parts{feat};
    if (cfg.disp_mode == DispMode::Delta || cfg.disp_mode == DispMode::Both)
      parts.push_back(
          sinusoidal_embed(sub(traj.positions[k], anchor_x), cfg.disp_freqs, true));
    if (cfg.disp_mode == DispMode::Abs || cfg.disp_mode == DispMode::Both)
      parts.push_back(sinusoidal_embed(traj.positions[k], cfg.pos_freqs, true));
    rows.push_back(concat_cols(parts));
  }
  return interleave_rows(rows);
}

// Static feature of points x: one frame chosen uniformly at random (excluding
// `exclude_time` when another frame exists), projected and sampled from E_st.
template <class T>
Var<T> sample_static_feature(const ParamBlock<T>& enc_block, const std::string& prefix,
                             const FrameCache<T>& static_cache,
                             const std::vector<CameraPose>& poses, const Var<T>& points,
                             int chosen_time) {
  return dynamic_feature_at(enc_block, prefix, static_cache, poses, points, chosen_time);
}

// The frame-selection rule, separated so callers can pre-encode the choice.
inline int choose_static_frame(int N, int exclude_time, Rng& rng) {
  if (N <= 1) return 1;
  if (exclude_time < 1 || exclude_time > N)
    return static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(N))) + 1;
  int pick = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(N - 1))) + 1;
  if (pick >= exclude_time) ++pick;
  return pick;
}

}  // namespace sf
