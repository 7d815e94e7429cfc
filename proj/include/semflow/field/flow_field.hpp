#pragma once

// Implicit flow field: per-point forward/backward motion prediction and
// trajectory chaining. The network predicts bounded displacements (tanh
// scaled by a max step) from the point's dynamic feature, its embedded
// position and its embedded timestamp; chaining re-queries features at each
// newly predicted position.

#include <functional>
#include <vector>

#include "semflow/autodiff/nn.hpp"
#include "semflow/config.hpp"

namespace sf {

template <class T>
void add_flow_field(ParamBlock<T>& block, const std::string& prefix, const ModelConfig& cfg,
                    Rng& rng) {
  Index in = cfg.feature_dim + 3 * (1 + 2 * cfg.pos_freqs) + (1 + 2 * cfg.disp_freqs);
  ResidualMlpSpec spec{in, cfg.trunk_width, 6, cfg.trunk_blocks};
  add_residual_mlp(block, prefix, spec, rng);
}

// Returns (positions at t-1, positions at t+1) for a batch of points x (Sx3)
// with their features (SxD) at time t of an N-frame video.
template <class T>
std::pair<Var<T>, Var<T>> flow_step(const ParamBlock<T>& block, const std::string& prefix,
                                    const ModelConfig& cfg, const Var<T>& feature,
                                    const Var<T>& x, int t, int N) {
  require_finite(x->value, "flow_step: non-finite positions");
  require_finite(feature->value, "flow_step: non-finite features");
  Var<T> x_embed = sinusoidal_embed(x, cfg.pos_freqs, true);
  Mat<T> tval = Mat<T>::Constant(x->rows(), 1, static_cast<T>(t) / static_cast<T>(N));
  Var<T> t_embed = sinusoidal_embed(constant<T>(tval), cfg.disp_freqs, true);
  Index in = cfg.feature_dim + 3 * (1 + 2 * cfg.pos_freqs) + (1 + 2 * cfg.disp_freqs);
  ResidualMlpSpec spec{in, cfg.trunk_width, 6, cfg.trunk_blocks};
  Var<T> raw = residual_mlp(block, prefix, spec, concat_cols<T>({feature, x_embed, t_embed}));
  Var<T> offsets = scale(tanh_op(raw), static_cast<T>(cfg.max_flow_step));
  Var<T> bwd = add(x, slice_cols(offsets, 0, 3));
  Var<T> fwd = add(x, slice_cols(offsets, 3, 3));
  return {bwd, fwd};
}

// A batch of trajectories around anchor time t: exactly 2W+1 entries in
// ascending-time order. Timestamps outside [1, N] are not materialized; their
// entries duplicate the anchor (zero displacement, anchor feature).
template <class T>
struct TrajectoryBatch {
  int anchor_t = 1;
  int window = 0;
  std::vector<int> times;        // per entry; out-of-range entries carry t
  std::vector<bool> is_anchor;   // true for the anchor and its duplicates
  std::vector<Var<T>> positions; // Sx3 each; anchor entry is x itself
  Var<T> position_at(int tau) const {
    for (size_t k = 0; k < times.size(); ++k)
      if (times[k] == tau) return positions[k];
    throw std::out_of_range("TrajectoryBatch: time " + std::to_string(tau) +
                            " outside materialized window");
  }
};

// features_fn(positions, time) must return the SxD dynamic feature of the
// given points at `time` (implemented by feature_agg via projection +
// bilinear sampling).
template <class T>
TrajectoryBatch<T> build_trajectory(
    const ParamBlock<T>& block, const std::string& prefix, const ModelConfig& cfg,
    const std::function<Var<T>(const Var<T>&, int)>& features_fn, const Var<T>& x, int t,
    int N, int window) {
  require(window >= 0, "build_trajectory: window must be >= 0");
  require(t >= 1 && t <= N, "build_trajectory: anchor time out of range");
  TrajectoryBatch<T> traj;
  traj.anchor_t = t;
  traj.window = window;

  std::vector<std::pair<int, Var<T>>> fwd{{t, x}}, bwd{{t, x}};
  Var<T> pos_f = x, pos_b = x;
  for (int r = 1; r <= window; ++r) {
    if (t + r <= N) {
      Var<T> feat = features_fn(pos_f, t + r - 1);
      pos_f = flow_step(block, prefix, cfg, feat, pos_f, t + r - 1, N).second;
      fwd.push_back({t + r, pos_f});
    }
    if (t - r >= 1) {
      Var<T> feat = features_fn(pos_b, t - r + 1);
      pos_b = flow_step(block, prefix, cfg, feat, pos_b, t - r + 1, N).first;
      bwd.push_back({t - r, pos_b});
    }
  }
  for (int k = -window; k <= window; ++k) {
    int tau = t + k;
    bool in_range = tau >= 1 && tau <= N;
    traj.times.push_back(in_range ? tau : t);
    traj.is_anchor.push_back(!in_range || k == 0);
    if (!in_range || k == 0) {
      traj.positions.push_back(x);
    } else if (k > 0) {
      traj.positions.push_back(fwd[static_cast<size_t>(k)].second);
    } else {
      traj.positions.push_back(bwd[static_cast<size_t>(-k)].second);
    }
  }
  return traj;
}

// Positions for re-rendering at time tau (Eq.-16-style warp). tau == anchor
// returns the original sample positions unchanged.
template <class T>
Var<T> warp_ray(const TrajectoryBatch<T>& traj, int tau) {
  return traj.position_at(tau);
}

}  // namespace sf
