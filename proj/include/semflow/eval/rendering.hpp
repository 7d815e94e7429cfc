#pragma once

// Full-frame rendering for evaluation, figure output and scene editing.
// Frames are rendered in ray chunks; values are extracted and the autodiff
// graph of each chunk is dropped immediately.

#include <set>

#include "semflow/eval/metrics.hpp"
#include "semflow/scene/png_io.hpp"
#include "semflow/train/trainer.hpp"

namespace sf {

struct RenderOptions {
  std::set<int> remove_classes;  // dynamic samples whose argmax logit is in
                                 // this set get sigma_dy := 0 (scene editing)
  Index chunk_rays = 256;
  bool want_flow = false;
};

template <class T>
struct RenderedFrame {
  Matf rgb;                 // (H*W)x3
  Eigen::VectorXi labels;   // argmax of rendered class probabilities
  Matf probs;               // (H*W)xL softmax of rendered logits
  Matf flow_fwd, flow_bwd;  // (H*W)x2 when requested and defined
  bool has_fwd = false, has_bwd = false;
};

// Per-sample keep mask for editing: drop every sample whose dynamic class
// probability mass on the removed classes is above uniform. The mask must
// be applied to both the dynamic density and the blend weight — zeroing
// density alone leaves the blend weight suppressing the static field, so
// edited rays go nearly transparent and their integrated semantics drift
// toward the uniform distribution instead of the revealed background.
template <class T>
Var<T> edit_keep_mask(const Var<T>& logits_dy, const Var<T>& sigma_dy,
                      const Var<T>& sigma_st, const Var<T>& blend_w,
                      const std::set<int>& remove_classes) {
  const Index L = logits_dy->cols();
  const T uniform = T(1) / static_cast<T>(L);
  Mat<T> probs = softmax_rows_value(logits_dy->value);
  Mat<T> keep(logits_dy->rows(), 1);
  for (Index s = 0; s < logits_dy->rows(); ++s) {
    T removed_mass = T(0);
    for (int c : remove_classes)
      if (c >= 0 && c < L) removed_mass += probs(s, c);
    // only samples whose blended density actually comes from the dynamic
    // branch; this keeps the mask away from static regions where the
    // (unsupervised there) dynamic logits are meaningless
    T b = blend_w->value(s, 0);
    bool dynamic_dominates =
        b * sigma_dy->value(s, 0) > (T(1) - b) * sigma_st->value(s, 0);
    keep(s, 0) = (removed_mass > uniform && dynamic_dominates) ? T(0) : T(1);
  }
  return constant<T>(keep);
}

template <class T>
Var<T> apply_edit(const Var<T>& sigma_dy, const Var<T>& logits_dy,
                  const Var<T>& sigma_st, const Var<T>& blend_w,
                  const std::set<int>& remove_classes) {
  if (remove_classes.empty()) return sigma_dy;
  return mul(sigma_dy, edit_keep_mask(logits_dy, sigma_dy, sigma_st, blend_w,
                                      remove_classes));
}

// Render frame t of the scene from its training pose (or any pose passed in).
template <class T>
RenderedFrame<T> render_frame(const SemanticFlowModel<T>& model, const SyntheticScene& scene,
                              int t, const CameraPose& pose, const TrainConfig& tc,
                              const RenderOptions& opts = {}) {
  const ModelConfig& cfg = model.cfg;
  const Index total = static_cast<Index>(scene.W) * scene.H;
  RenderedFrame<T> out;
  out.rgb = Matf::Zero(total, 3);
  out.probs = Matf::Zero(total, cfg.num_classes);
  out.labels = Eigen::VectorXi::Zero(total);
  out.has_fwd = opts.want_flow && t < scene.N;
  out.has_bwd = opts.want_flow && t > 1;
  if (out.has_fwd) out.flow_fwd = Matf::Zero(total, 2);
  if (out.has_bwd) out.flow_bwd = Matf::Zero(total, 2);

  // deterministic renders: encode once, midpoint depth samples (no jitter)
  Rng rng(tc.seed);
  FrameCache<T> dy_cache;
  for (int tau = t - cfg.window; tau <= t + cfg.window; ++tau) {
    if (tau < 1 || tau > scene.N) continue;
    dy_cache.emplace(tau, model.encode_dynamic(
        constant<T>(scene.frames[static_cast<size_t>(tau - 1)].template cast<T>()),
        scene.H, scene.W));
  }
  int t_star = choose_static_frame(scene.N, t, rng);
  FrameCache<T> st_cache;
  st_cache.emplace(t_star, model.encode_static(
      constant<T>(scene.frames[static_cast<size_t>(t_star - 1)].template cast<T>()),
      scene.H, scene.W));

  for (Index start = 0; start < total; start += opts.chunk_rays) {
    Index n = std::min(opts.chunk_rays, total - start);
    std::vector<Index> px(static_cast<size_t>(n));
    for (Index i = 0; i < n; ++i) px[static_cast<size_t>(i)] = start + i;

    RayBatch<T> batch = make_ray_batch<T>(scene, t, px, cfg);
    // override the camera (novel-view rendering)
    if (&pose != &scene.poses[static_cast<size_t>(t - 1)]) {
      for (Index r = 0; r < n; ++r) {
        int i = static_cast<int>(px[static_cast<size_t>(r)]) % scene.W;
        int j = static_cast<int>(px[static_cast<size_t>(r)]) / scene.W;
        Ray ray = pixel_ray(pose, i, j);
        batch.origins.row(r) = ray.origin.cast<T>().transpose();
        batch.directions.row(r) = ray.direction.cast<T>().transpose();
      }
    }
    Mat<T> depths = sample_ray_depths<T>(n, tc.samples_per_ray, static_cast<T>(cfg.u_near),
                                         static_cast<T>(cfg.u_far), false, rng);
    Mat<T> deltas = depth_deltas(depths, static_cast<T>(cfg.u_near),
                                 static_cast<T>(cfg.u_far));
    Var<T> positions = constant<T>(ray_sample_positions(batch, depths));

    StaticForward<T> st = forward_static(model, positions, deltas, st_cache, scene.poses,
                                         t_star);
    DynamicPointEval<T> dy =
        eval_dynamic_points(model, dy_cache, scene.poses, positions, t, scene.N);
    Var<T> sigma_dy = dy.sigma;
    Var<T> blend_w = dy.blend_w;
    if (!opts.remove_classes.empty()) {
      Var<T> keep =
          edit_keep_mask(dy.logits, dy.sigma, st.sigma, dy.blend_w, opts.remove_classes);
      sigma_dy = mul(sigma_dy, keep);
      blend_w = mul(blend_w, keep);
    }

    BlendResult<T> rgb_blend = blend(st.sigma, st.color, sigma_dy, dy.color, blend_w,
                                     deltas);
    Var<T> rgb = integrate(rgb_blend.quad, rgb_blend.values);
    BlendResult<T> sem_blend = blend(st.sigma, st.logits, sigma_dy, dy.logits, blend_w,
                                     deltas);
    Var<T> sem = integrate(sem_blend.quad, sem_blend.values);
    Mat<T> probs = softmax_rows_value(sem->value);

    for (Index r = 0; r < n; ++r) {
      for (int c = 0; c < 3; ++c)
        out.rgb(start + r, c) = static_cast<float>(
            std::clamp(rgb->value(r, c), T(0), T(1)));
      Index best;
      probs.row(r).maxCoeff(&best);
      out.labels(start + r) = static_cast<int>(best);
      for (int c = 0; c < cfg.num_classes; ++c)
        out.probs(start + r, c) = static_cast<float>(probs(r, c));
    }

    if (out.has_fwd || out.has_bwd) {
      Quadrature<T> quad_dy = quadrature(sigma_dy, deltas);
      if (out.has_fwd) {
        Var<T> ff = render_optical_flow(model, dy.traj, quad_dy, batch, scene.poses, t + 1);
        for (Index r = 0; r < n; ++r)
          for (int c = 0; c < 2; ++c)
            out.flow_fwd(start + r, c) = static_cast<float>(ff->value(r, c));
      }
      if (out.has_bwd) {
        Var<T> fb = render_optical_flow(model, dy.traj, quad_dy, batch, scene.poses, t - 1);
        for (Index r = 0; r < n; ++r)
          for (int c = 0; c < 2; ++c)
            out.flow_bwd(start + r, c) = static_cast<float>(fb->value(r, c));
      }
    }
  }
  return out;
}

template <class T>
RenderedFrame<T> render_frame(const SemanticFlowModel<T>& model, const SyntheticScene& scene,
                              int t, const TrainConfig& tc, const RenderOptions& opts = {}) {
  return render_frame(model, scene, t, scene.poses[static_cast<size_t>(t - 1)], tc, opts);
}

// Write a rendered frame as figure-style artifacts: RGB, argmax labels, and
// one probability map per class.
template <class T>
void write_rendered_frame(const RenderedFrame<T>& frame, int W, int H,
                          const std::string& dir, const std::string& tag) {
  std::filesystem::create_directories(dir);
  Index total = static_cast<Index>(W) * H;
  std::vector<std::uint8_t> rgb(static_cast<size_t>(total) * 3);
  for (Index p = 0; p < total; ++p)
    for (int c = 0; c < 3; ++c)
      rgb[static_cast<size_t>(p) * 3 + c] = static_cast<std::uint8_t>(
          std::lround(std::clamp(frame.rgb(p, c), 0.0f, 1.0f) * 255.0f));
  write_png(dir + "/rgb_" + tag + ".png", rgb.data(), W, H, 3);

  std::vector<std::uint8_t> lab(static_cast<size_t>(total));
  for (Index p = 0; p < total; ++p) lab[static_cast<size_t>(p)] =
      static_cast<std::uint8_t>(frame.labels(p));
  write_png(dir + "/label_" + tag + ".png", lab.data(), W, H, 1);

  for (Index c = 0; c < frame.probs.cols(); ++c) {
    std::vector<std::uint8_t> pm(static_cast<size_t>(total));
    for (Index p = 0; p < total; ++p)
      pm[static_cast<size_t>(p)] = static_cast<std::uint8_t>(
          std::lround(std::clamp(frame.probs(p, c), 0.0f, 1.0f) * 255.0f));
    write_png(dir + "/prob_" + tag + "_class" + std::to_string(c) + ".png", pm.data(), W, H,
              1);
  }
}

// Per-frame evaluation summary over a set of frames.
struct EvalRow {
  int t = 0;
  PixelMetrics seg;
  ImageMetrics img;
  double flow_epe_fg = -1;  // mean forward-flow endpoint error on fg pixels
};

template <class T>
EvalRow evaluate_frame(const SemanticFlowModel<T>& model, const SyntheticScene& scene, int t,
                       const TrainConfig& tc, bool with_flow = false) {
  RenderOptions opts;
  opts.want_flow = with_flow;
  RenderedFrame<T> frame = render_frame(model, scene, t, tc, opts);
  EvalRow row;
  row.t = t;
  const auto& gt_labels = scene.labels[static_cast<size_t>(t - 1)];
  row.seg = pixel_metrics(frame.labels, gt_labels, model.cfg.num_classes);
  row.img = image_metrics(frame.rgb, scene.frames[static_cast<size_t>(t - 1)], scene.W,
                          scene.H);
  if (with_flow && frame.has_fwd && scene.flow_fwd_valid(t)) {
    const Matf& gt = scene.flow_fwd[static_cast<size_t>(t - 1)];
    const auto& mask = scene.foreground_mask[static_cast<size_t>(t - 1)];
    double sum = 0;
    int n = 0;
    for (Index p = 0; p < gt.rows(); ++p) {
      if (!mask(p)) continue;
      double dx = frame.flow_fwd(p, 0) - gt(p, 0);
      double dy = frame.flow_fwd(p, 1) - gt(p, 1);
      sum += std::sqrt(dx * dx + dy * dy);
      ++n;
    }
    row.flow_epe_fg = n ? sum / n : -1;
  }
  return row;
}

}  // namespace sf
