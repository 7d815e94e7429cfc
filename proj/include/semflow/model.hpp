#pragma once

// The full model: two encoders, the flow field, the dynamic field (geometry +
// flow-attention semantics), the static field, and the batched forward pass
// that renders a ray batch into colors, semantic logits and optical flow.

#include "semflow/field/heads.hpp"
#include "semflow/render/renderer.hpp"
#include "semflow/scene/scene.hpp"

namespace sf {

template <class T>
struct SemanticFlowModel {
  ModelConfig cfg;
  ParamBlock<T> enc_dy{"enc_dy"};
  ParamBlock<T> enc_st{"enc_st"};
  ParamBlock<T> flow{"flow"};
  ParamBlock<T> dyn_field{"dyn_field"};  // geo + flow attention heads
  ParamBlock<T> st_field{"st_field"};    // geo + static semantic head

  explicit SemanticFlowModel(const ModelConfig& c) : cfg(c) {}

  void init(Rng& rng) {
    add_conv_encoder(enc_dy, "enc", cfg, rng);
    add_conv_encoder(enc_st, "enc", cfg, rng);
    add_flow_field(flow, "net", cfg, rng);
    add_geo(dyn_field, "geo", cfg, true, rng);
    add_flow_heads(dyn_field, cfg, rng);
    add_geo(st_field, "geo", cfg, false, rng);
    add_static_sem_head(st_field, cfg, rng);
  }

  std::vector<ParamBlock<T>*> all_blocks() {
    return {&enc_dy, &enc_st, &flow, &dyn_field, &st_field};
  }
  std::vector<ParamBlock<T>*> static_blocks() { return {&enc_st, &st_field}; }
  std::vector<ParamBlock<T>*> dynamic_blocks() { return {&enc_dy, &flow, &dyn_field}; }

  EncodedFrame<T> encode_dynamic(const Var<T>& image, Index H, Index W) const {
    return encode_frame(enc_dy, "enc", image, H, W);
  }
  EncodedFrame<T> encode_static(const Var<T>& image, Index H, Index W) const {
    return encode_frame(enc_st, "enc", image, H, W);
  }
};

// One batch of rays from a single frame.
template <class T>
struct RayBatch {
  int t = 1;                 // anchor frame, 1-based
  Mat<T> origins;            // Rx3
  Mat<T> directions;         // Rx3, unit
  Mat<T> pixels;             // Rx2 (u,v)
  std::vector<Index> pixel_index;  // row into (H*W) maps
  Index size() const { return origins.rows(); }
};

template <class T>
struct StaticForward {
  Var<T> positions;   // (R*M)x3 constant
  Mat<T> deltas;      // RxM
  Var<T> sigma;       // (R*M)x1
  Var<T> color;       // (R*M)x3
  Var<T> logits;      // (R*M)xL per-sample
  Quadrature<T> quad;
  Var<T> rgb;         // Rx3 rendered
  Var<T> sem;         // RxL rendered logits
};

template <class T>
struct DynamicForward {
  StaticForward<T> st;        // the static branch at the same depths
  TrajectoryBatch<T> traj;
  Var<T> anchor_feature;      // (R*M)xD
  Var<T> sigma_dy, color_dy, blend_w;  // per sample
  Var<T> logits_dy;           // per sample
  Quadrature<T> quad_dy;
  Var<T> rgb_dy, sem_dy;      // rendered from the dynamic branch alone
  Var<T> rgb_full, sem_full;  // blended rendering
  Var<T> flow_fwd, flow_bwd;  // Rx2 rendered optical flow (valid flags below)
  bool has_fwd = false, has_bwd = false;
  Var<T> depth_full;          // Rx1 expected depth of the blended field
};

// Ray-sample world positions as a constant (R*M)x3 matrix.
template <class T>
Mat<T> ray_sample_positions(const RayBatch<T>& batch, const Mat<T>& depths) {
  Index R = batch.size(), M = depths.cols();
  Mat<T> pts(R * M, 3);
  for (Index r = 0; r < R; ++r)
    for (Index m = 0; m < M; ++m)
      pts.row(r * M + m) =
          batch.origins.row(r) + depths(r, m) * batch.directions.row(r);
  return pts;
}

template <class T>
Var<T> embed_time(Index rows, int t, int N, int freqs) {
  Mat<T> tv = Mat<T>::Constant(rows, 1, static_cast<T>(t) / static_cast<T>(N));
  return sinusoidal_embed(constant<T>(tv), freqs, true);
}

// Static branch at given sample positions. `static_time` selects the frame
// whose E_st features are sampled (see choose_static_frame).
template <class T>
StaticForward<T> forward_static(const SemanticFlowModel<T>& model, const Var<T>& positions,
                                const Mat<T>& deltas, const FrameCache<T>& st_cache,
                                const std::vector<CameraPose>& poses, int static_time) {
  StaticForward<T> out;
  out.positions = positions;
  out.deltas = deltas;
  Var<T> feat = dynamic_feature_at(model.enc_st, "enc", st_cache, poses, positions,
                                   static_time);
  Var<T> x_embed = sinusoidal_embed(positions, model.cfg.pos_freqs, true);
  GeoOutput<T> geo = geo_forward(model.st_field, "geo", model.cfg, feat, x_embed,
                                 Var<T>(), false);
  out.sigma = geo.sigma;
  out.color = geo.color;
  out.logits = static_semantic_logits(model.st_field, model.cfg, feat, x_embed);
  out.quad = quadrature(out.sigma, deltas);
  out.rgb = integrate(out.quad, out.color);
  out.sem = integrate(out.quad, out.logits);
  return out;
}

// Dynamic semantic logits + geometry at arbitrary positions/time; shared by
// the main forward pass and the consistency re-evaluation.
template <class T>
struct DynamicPointEval {
  TrajectoryBatch<T> traj;
  Var<T> anchor_feature;
  Var<T> sigma, color, blend_w;  // per sample
  Var<T> logits;                 // per sample
};

template <class T>
DynamicPointEval<T> eval_dynamic_points(const SemanticFlowModel<T>& model,
                                        const FrameCache<T>& dy_cache,
                                        const std::vector<CameraPose>& poses,
                                        const Var<T>& positions, int t, int N) {
  const ModelConfig& cfg = model.cfg;
  DynamicPointEval<T> out;
  out.anchor_feature =
      dynamic_feature_at(model.enc_dy, "enc", dy_cache, poses, positions, t);

  auto features_fn = [&](const Var<T>& pts, int tau) -> Var<T> {
    if (pts.get() == positions.get() && tau == t) return out.anchor_feature;
    return dynamic_feature_at(model.enc_dy, "enc", dy_cache, poses, pts, tau);
  };
  out.traj = build_trajectory<T>(model.flow, "net", cfg, features_fn, positions, t, N,
                                 cfg.window);

  Var<T> tokens = assemble_flow_features(model.enc_dy, "enc", dy_cache, poses, cfg,
                                         out.traj, positions);
  Index G = static_cast<Index>(out.traj.times.size());
  out.logits = flow_semantic_logits(model.dyn_field, cfg, tokens, G);

  Var<T> x_embed = sinusoidal_embed(positions, cfg.pos_freqs, true);
  Var<T> t_embed = embed_time<T>(positions->rows(), t, N, cfg.disp_freqs);
  GeoOutput<T> geo = geo_forward(model.dyn_field, "geo", cfg, out.anchor_feature, x_embed,
                                 t_embed, true);
  out.sigma = geo.sigma;
  out.color = geo.color;
  out.blend_w = geo.blend;
  return out;
}

// Rendered 2D optical flow toward frame tau: project the trajectory position
// at tau with frame tau's camera and integrate the per-sample pixel
// displacement with (optionally normalized) dynamic quadrature weights.
template <class T>
Var<T> render_optical_flow(const SemanticFlowModel<T>& model, const TrajectoryBatch<T>& traj,
                           const Quadrature<T>& quad_dy, const RayBatch<T>& batch,
                           const std::vector<CameraPose>& poses, int tau) {
  Var<T> pos_tau = traj.position_at(tau);
  Var<T> uv = project_to_pixels(pos_tau, poses[static_cast<size_t>(tau - 1)]);
  Index R = batch.size(), M = pos_tau->rows() / R;
  Mat<T> base(R * M, 2);
  for (Index r = 0; r < R; ++r)
    for (Index m = 0; m < M; ++m) base.row(r * M + m) = batch.pixels.row(r);
  Var<T> disp = sub(uv, constant<T>(base));
  if (model.cfg.normalize_flow_weights) return integrate_normalized(quad_dy, disp);
  return integrate(quad_dy, disp);
}

// Full forward pass over one ray batch: static branch, dynamic branch and the
// blended rendering, plus rendered optical flow where neighbours exist.
template <class T>
DynamicForward<T> forward_dynamic(const SemanticFlowModel<T>& model, const RayBatch<T>& batch,
                                  const Mat<T>& depths, int N,
                                  const FrameCache<T>& dy_cache, const FrameCache<T>& st_cache,
                                  const std::vector<CameraPose>& poses, int static_time,
                                  bool want_depth = false) {
  const ModelConfig& cfg = model.cfg;
  Mat<T> deltas = depth_deltas(depths, static_cast<T>(cfg.u_near), static_cast<T>(cfg.u_far));
  Var<T> positions = constant<T>(ray_sample_positions(batch, depths));

  DynamicForward<T> out;
  out.st = forward_static(model, positions, deltas, st_cache, poses, static_time);

  DynamicPointEval<T> dy = eval_dynamic_points(model, dy_cache, poses, positions, batch.t, N);
  out.traj = dy.traj;
  out.anchor_feature = dy.anchor_feature;
  out.sigma_dy = dy.sigma;
  out.color_dy = dy.color;
  out.blend_w = dy.blend_w;
  out.logits_dy = dy.logits;

  out.quad_dy = quadrature(out.sigma_dy, deltas);
  out.rgb_dy = integrate(out.quad_dy, out.color_dy);
  out.sem_dy = integrate(out.quad_dy, out.logits_dy);

  BlendResult<T> rgb_blend = blend(out.st.sigma, out.st.color, out.sigma_dy, out.color_dy,
                                   out.blend_w, deltas);
  out.rgb_full = integrate(rgb_blend.quad, rgb_blend.values);
  BlendResult<T> sem_blend = blend(out.st.sigma, out.st.logits, out.sigma_dy, out.logits_dy,
                                   out.blend_w, deltas);
  out.sem_full = integrate(sem_blend.quad, sem_blend.values);

  if (batch.t < N) {
    out.flow_fwd = render_optical_flow(model, out.traj, out.quad_dy, batch, poses,
                                       batch.t + 1);
    out.has_fwd = true;
  }
  if (batch.t > 1) {
    out.flow_bwd = render_optical_flow(model, out.traj, out.quad_dy, batch, poses,
                                       batch.t - 1);
    out.has_bwd = true;
  }
  if (want_depth) {
    Index R = batch.size(), M = depths.cols();
    Mat<T> u(R * M, 1);
    for (Index r = 0; r < R; ++r)
      for (Index m = 0; m < M; ++m) u(r * M + m, 0) = depths(r, m);
    out.depth_full = integrate(rgb_blend.quad, constant<T>(u));
  }
  return out;
}

}  // namespace sf
