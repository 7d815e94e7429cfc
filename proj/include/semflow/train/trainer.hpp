#pragma once

// Loss terms, the composite objective and the two-phase training loop.
// Phase 1 fits the static field on non-dynamic pixels; phase 2 trains the
// dynamic components jointly with the (optionally frozen) static field.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "semflow/eval/checkpoint.hpp"
#include "semflow/model.hpp"

namespace sf {

template <class T>
Var<T> loss_mse(const Var<T>& pred, const Mat<T>& gt) {
  return mean_all(square(sub(pred, constant<T>(gt))));
}

template <class T>
Var<T> loss_l1(const Var<T>& pred, const Mat<T>& gt) {
  return mean_all(abs_op(sub(pred, constant<T>(gt))));
}

template <class T>
Var<T> loss_semantic(const Var<T>& logits, const std::vector<int>& gt_classes) {
  return mean_all(crossentropy_rows(logits, gt_classes));
}

// The eight weighted terms. Absent terms (empty masks, boundary frames) stay
// null and contribute zero.
template <class T>
struct LossTerms {
  Var<T> st_rgb, dy_rgb, full_rgb, opt, full_sem, dy_sem, st_sem, consist, depth;

  std::vector<std::pair<const char*, const Var<T>*>> named() const {
    return {{"st_rgb", &st_rgb},     {"dy_rgb", &dy_rgb}, {"full_rgb", &full_rgb},
            {"opt", &opt},           {"full_sem", &full_sem}, {"dy_sem", &dy_sem},
            {"st_sem", &st_sem},     {"consist", &consist},   {"depth", &depth}};
  }
};

template <class T>
Var<T> loss_total(const LossTerms<T>& terms, const LossWeights& w) {
  const double alphas[] = {w.st_rgb, w.dy_rgb, w.full_rgb, w.opt,  w.full_sem,
                           w.dy_sem, w.st_sem, w.consist,  w.depth};
  Var<T> total;
  auto named = terms.named();
  for (size_t i = 0; i < named.size(); ++i) {
    const Var<T>& term = *named[i].second;
    if (!term) continue;
    if (!std::isfinite(static_cast<double>(term->value(0, 0))))
      throw std::runtime_error(std::string("loss_total: non-finite term ") + named[i].first);
    Var<T> scaled = scale(term, static_cast<T>(alphas[i]));
    total = total ? add(total, scaled) : scaled;
  }
  if (!total) total = constant<T>(Mat<T>::Zero(1, 1));
  return total;
}

// ---------------------------------------------------------------------------
// Batch assembly

template <class T>
RayBatch<T> make_ray_batch(const SyntheticScene& scene, int t, const std::vector<Index>& px,
                           const ModelConfig& cfg) {
  RayBatch<T> batch;
  batch.t = t;
  Index R = static_cast<Index>(px.size());
  batch.origins.resize(R, 3);
  batch.directions.resize(R, 3);
  batch.pixels.resize(R, 2);
  batch.pixel_index = px;
  const CameraPose& pose = scene.poses[static_cast<size_t>(t - 1)];
  for (Index r = 0; r < R; ++r) {
    int i = static_cast<int>(px[static_cast<size_t>(r)]) % scene.W;
    int j = static_cast<int>(px[static_cast<size_t>(r)]) / scene.W;
    Ray ray = pixel_ray(pose, i, j);
    batch.origins.row(r) = ray.origin.cast<T>().transpose();
    batch.directions.row(r) = ray.direction.cast<T>().transpose();
    batch.pixels(r, 0) = static_cast<T>(i);
    batch.pixels(r, 1) = static_cast<T>(j);
  }
  (void)cfg;
  return batch;
}

template <class T>
Mat<T> gather_gt_rgb(const SyntheticScene& scene, int t, const std::vector<Index>& px) {
  Mat<T> gt(static_cast<Index>(px.size()), 3);
  for (size_t r = 0; r < px.size(); ++r)
    gt.row(static_cast<Index>(r)) =
        scene.frames[static_cast<size_t>(t - 1)].row(px[r]).template cast<T>();
  return gt;
}

inline std::vector<int> gather_gt_labels(const SyntheticScene& scene, int t,
                                         const std::vector<Index>& px) {
  std::vector<int> gt(px.size());
  for (size_t r = 0; r < px.size(); ++r)
    gt[r] = scene.labels[static_cast<size_t>(t - 1)](px[r]);
  return gt;
}

// ---------------------------------------------------------------------------
// Per-batch losses for the dynamic phase

template <class T>
struct BatchContext {
  const SyntheticScene* scene = nullptr;
  RayBatch<T> batch;
  std::vector<Index> fg_rows, bg_rows;  // ray indices split by foreground mask
  std::vector<int> labels;              // per ray
  Mat<T> gt_rgb;
};

template <class T>
BatchContext<T> make_batch_context(const SyntheticScene& scene, int t,
                                   const std::vector<Index>& px, const ModelConfig& cfg) {
  BatchContext<T> ctx;
  ctx.scene = &scene;
  ctx.batch = make_ray_batch<T>(scene, t, px, cfg);
  ctx.labels = gather_gt_labels(scene, t, px);
  ctx.gt_rgb = gather_gt_rgb<T>(scene, t, px);
  for (size_t r = 0; r < px.size(); ++r) {
    if (scene.foreground_mask[static_cast<size_t>(t - 1)](px[r]))
      ctx.fg_rows.push_back(static_cast<Index>(r));
    else
      ctx.bg_rows.push_back(static_cast<Index>(r));
  }
  return ctx;
}

template <class T>
Mat<T> select_rows(const Mat<T>& m, const std::vector<Index>& rows) {
  Mat<T> out(static_cast<Index>(rows.size()), m.cols());
  for (size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = m.row(rows[r]);
  return out;
}

inline std::vector<int> select_ints(const std::vector<int>& v, const std::vector<Index>& rows) {
  std::vector<int> out(rows.size());
  for (size_t r = 0; r < rows.size(); ++r) out[r] = v[static_cast<size_t>(rows[r])];
  return out;
}

// Consistency loss: warp up to `max_rays` foreground rays to tau, re-evaluate
// the dynamic semantic pipeline at the warped positions/time, render with the
// warped-branch density and compare against the ORIGINAL rays' labels.
template <class T>
Var<T> loss_consistency(const SemanticFlowModel<T>& model, const DynamicForward<T>& fwd,
                        const BatchContext<T>& ctx, const FrameCache<T>& dy_cache,
                        const std::vector<CameraPose>& poses, int tau, int N,
                        int max_rays) {
  std::vector<Index> rays = ctx.fg_rows;
  if (static_cast<int>(rays.size()) > max_rays) rays.resize(static_cast<size_t>(max_rays));
  if (rays.empty()) return Var<T>();

  Index M = fwd.st.deltas.cols();
  std::vector<Index> sample_rows;
  sample_rows.reserve(rays.size() * static_cast<size_t>(M));
  for (Index r : rays)
    for (Index m = 0; m < M; ++m) sample_rows.push_back(r * M + m);

  Var<T> warped = gather_rows(warp_ray(fwd.traj, tau), sample_rows);
  DynamicPointEval<T> re = eval_dynamic_points(model, dy_cache, poses, warped, tau, N);

  Mat<T> deltas = select_rows(fwd.st.deltas, rays);
  Quadrature<T> quad = quadrature(re.sigma, deltas);
  Var<T> sem = integrate(quad, re.logits);
  return loss_semantic(sem, select_ints(ctx.labels, rays));
}

template <class T>
LossTerms<T> dynamic_phase_losses(const SemanticFlowModel<T>& model,
                                  const DynamicForward<T>& fwd, const BatchContext<T>& ctx,
                                  const FrameCache<T>& dy_cache,
                                  const std::vector<CameraPose>& poses,
                                  const TrainConfig& tc, Rng& rng, bool want_depth) {
  const SyntheticScene& scene = *ctx.scene;
  const int t = ctx.batch.t, N = scene.N;
  LossTerms<T> terms;

  terms.full_rgb = loss_mse(fwd.rgb_full, ctx.gt_rgb);
  if (!ctx.bg_rows.empty())
    terms.st_rgb = loss_mse(gather_rows(fwd.st.rgb, ctx.bg_rows),
                            select_rows(ctx.gt_rgb, ctx.bg_rows));
  if (!ctx.fg_rows.empty())
    terms.dy_rgb = loss_mse(gather_rows(fwd.rgb_dy, ctx.fg_rows),
                            select_rows(ctx.gt_rgb, ctx.fg_rows));

  // optical flow: L1 on foreground rays, directions with defined ground truth
  if (!ctx.fg_rows.empty()) {
    Var<T> opt;
    int n_dir = 0;
    auto add_dir = [&](const Var<T>& rendered, const std::vector<Matf>& gt_maps) {
      Mat<T> gt(static_cast<Index>(ctx.fg_rows.size()), 2);
      for (size_t r = 0; r < ctx.fg_rows.size(); ++r)
        gt.row(static_cast<Index>(r)) =
            gt_maps[static_cast<size_t>(t - 1)]
                .row(ctx.batch.pixel_index[static_cast<size_t>(ctx.fg_rows[r])])
                .template cast<T>();
      Var<T> term = loss_l1(gather_rows(rendered, ctx.fg_rows), gt);
      opt = opt ? add(opt, term) : term;
      ++n_dir;
    };
    if (fwd.has_fwd && scene.flow_fwd_valid(t)) add_dir(fwd.flow_fwd, scene.flow_fwd);
    if (fwd.has_bwd && scene.flow_bwd_valid(t)) add_dir(fwd.flow_bwd, scene.flow_bwd);
    if (opt && n_dir > 1) opt = scale(opt, T(1) / static_cast<T>(n_dir));
    terms.opt = opt;
  }

  if (schedule_has_labels(tc.label_schedule, t, N)) {
    terms.full_sem = loss_semantic(fwd.sem_full, ctx.labels);
    if (!ctx.fg_rows.empty())
      terms.dy_sem = loss_semantic(gather_rows(fwd.sem_dy, ctx.fg_rows),
                                   select_ints(ctx.labels, ctx.fg_rows));
    if (!ctx.bg_rows.empty())
      terms.st_sem = loss_semantic(gather_rows(fwd.st.sem, ctx.bg_rows),
                                   select_ints(ctx.labels, ctx.bg_rows));
    std::vector<int> taus;
    if (t > 1) taus.push_back(t - 1);
    if (t < N) taus.push_back(t + 1);
    if (!taus.empty()) {
      int tau = taus[rng.uniform_index(taus.size())];
      terms.consist = loss_consistency(model, fwd, ctx, dy_cache, poses, tau, N,
                                       tc.consist_max_rays);
    }
  }

  if (want_depth) {
    Mat<T> gt_d(static_cast<Index>(ctx.batch.pixel_index.size()), 1);
    for (size_t r = 0; r < ctx.batch.pixel_index.size(); ++r)
      gt_d(static_cast<Index>(r), 0) = static_cast<T>(
          scene.depth[static_cast<size_t>(t - 1)](ctx.batch.pixel_index[r]));
    terms.depth = loss_l1(fwd.depth_full, gt_d);
  }
  return terms;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainLogEntry {
  int step = 0;
  int phase = 1;
  double terms[9] = {0};  // st_rgb, dy_rgb, full_rgb, opt, full_sem, dy_sem, st_sem, consist, depth
  double total = 0;
  double wall_ms = 0;
};

template <class T>
struct Trainer {
  SemanticFlowModel<T>& model;
  RunConfig cfg;
  std::vector<const SyntheticScene*> scenes;
  std::string out_dir;
  std::vector<TrainLogEntry> log;
  Rng rng;

  Trainer(SemanticFlowModel<T>& m, const RunConfig& c,
          std::vector<const SyntheticScene*> sc, std::string out)
      : model(m), cfg(c), scenes(std::move(sc)), out_dir(std::move(out)),
        rng(c.train.seed) {
    require(!scenes.empty(), "Trainer: no scenes");
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  }

  void save(const std::string& name) {
    if (out_dir.empty()) return;
    std::vector<const ParamBlock<T>*> blocks;
    for (auto* b : model.all_blocks()) blocks.push_back(b);
    save_checkpoint<T>(out_dir + "/" + name, blocks);
  }

  void write_log(const std::string& name) const {
    if (out_dir.empty()) return;
    std::ofstream f(out_dir + "/" + name);
    f << "step,phase,st_rgb,dy_rgb,full_rgb,opt,full_sem,dy_sem,st_sem,consist,depth,"
         "total,wall_ms\n";
    f.precision(10);
    for (const auto& e : log) {
      f << e.step << "," << e.phase;
      for (double v : e.terms) f << "," << v;
      f << "," << e.total << "," << e.wall_ms << "\n";
    }
  }

  std::vector<Index> sample_pixels(const SyntheticScene& scene, int t, Index count,
                                   bool background_only) {
    std::vector<Index> px;
    px.reserve(static_cast<size_t>(count));
    const auto& mask = scene.foreground_mask[static_cast<size_t>(t - 1)];
    Index total = static_cast<Index>(scene.W) * scene.H;
    int guard = 0;
    while (static_cast<Index>(px.size()) < count) {
      Index p = static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(total)));
      if (background_only && mask(p)) {
        if (++guard > 100000)
          throw std::runtime_error("sample_pixels: no background pixels found");
        continue;
      }
      px.push_back(p);
    }
    return px;
  }

  // encode the frames phase 2 needs for anchor t; the consistency warp
  // re-anchors at t+-1, so its trajectories reach one frame further out
  FrameCache<T> encode_window(const SyntheticScene& scene, int t) {
    FrameCache<T> cache;
    int margin = model.cfg.window + (cfg.weights.consist > 0 ? 1 : 0);
    for (int tau = t - margin; tau <= t + margin; ++tau) {
      if (tau < 1 || tau > scene.N) continue;
      Var<T> img = constant<T>(
          scene.frames[static_cast<size_t>(tau - 1)].template cast<T>());
      cache.emplace(tau, model.encode_dynamic(img, scene.H, scene.W));
    }
    return cache;
  }

  FrameCache<T> encode_static_frame(const SyntheticScene& scene, int t_star) {
    FrameCache<T> cache;
    Var<T> img = constant<T>(
        scene.frames[static_cast<size_t>(t_star - 1)].template cast<T>());
    cache.emplace(t_star, model.encode_static(img, scene.H, scene.W));
    return cache;
  }

  void step_blocks(std::vector<ParamBlock<T>*> blocks,
                   std::map<std::string, AdamState<T>>& states) {
    for (auto* b : blocks) {
      auto& st = states[b->name];
      st.lr = static_cast<T>(cfg.train.lr);
      st.beta1 = static_cast<T>(cfg.train.beta1);
      st.beta2 = static_cast<T>(cfg.train.beta2);
      adam_step(st, *b);
    }
  }

  void record(int step, int phase, const LossTerms<T>& terms, const Var<T>& total,
              double wall_ms) {
    TrainLogEntry e;
    e.step = step;
    e.phase = phase;
    auto named = terms.named();
    for (size_t i = 0; i < named.size(); ++i)
      e.terms[i] = *named[i].second
                       ? static_cast<double>((*named[i].second)->value(0, 0))
                       : 0.0;
    e.total = static_cast<double>(total->value(0, 0));
    e.wall_ms = wall_ms;
    log.push_back(e);
  }

  void run() {
    using clock = std::chrono::steady_clock;
    const TrainConfig& tc = cfg.train;
    std::map<std::string, AdamState<T>> adam;
    Index rays_per_scene =
        static_cast<Index>(tc.batch_rays) / static_cast<Index>(scenes.size());
    require(rays_per_scene > 0, "run_training: batch smaller than scene count");
    bool want_depth = cfg.weights.depth > 0;

    // Phase 1: static field on non-dynamic pixels.
    for (int step = 1; step <= tc.static_steps; ++step) {
      auto t0 = clock::now();
      for (auto* b : model.all_blocks()) zero_grads(*b);
      LossTerms<T> terms;
      for (const SyntheticScene* sp : scenes) {
        const SyntheticScene& scene = *sp;
        int t = static_cast<int>(rng.uniform_index(
                    static_cast<std::uint64_t>(scene.N))) + 1;
        int t_star = choose_static_frame(scene.N, t, rng);
        FrameCache<T> st_cache = encode_static_frame(scene, t_star);
        std::vector<Index> px = sample_pixels(scene, t, rays_per_scene, true);
        BatchContext<T> ctx = make_batch_context<T>(scene, t, px, model.cfg);
        Mat<T> depths = sample_ray_depths<T>(
            ctx.batch.size(), tc.samples_per_ray, static_cast<T>(model.cfg.u_near),
            static_cast<T>(model.cfg.u_far), true, rng);
        Mat<T> deltas = depth_deltas(depths, static_cast<T>(model.cfg.u_near),
                                     static_cast<T>(model.cfg.u_far));
        Var<T> positions = constant<T>(ray_sample_positions(ctx.batch, depths));
        StaticForward<T> fwd = forward_static(model, positions, deltas, st_cache,
                                              scene.poses, t_star);
        Var<T> rgb_term = loss_mse(fwd.rgb, ctx.gt_rgb);
        terms.st_rgb = terms.st_rgb ? add(terms.st_rgb, rgb_term) : rgb_term;
        if (schedule_has_labels(tc.label_schedule, t, scene.N)) {
          Var<T> sem_term = loss_semantic(fwd.sem, ctx.labels);
          terms.st_sem = terms.st_sem ? add(terms.st_sem, sem_term) : sem_term;
        }
      }
      Var<T> total = loss_total(terms, cfg.weights);
      finish_step(total, terms, adam, model.static_blocks(), step, 1, t0);
    }

    // Phase 2: everything, blended.
    for (int step = 1; step <= tc.dynamic_steps; ++step) {
      auto t0 = clock::now();
      for (auto* b : model.all_blocks()) zero_grads(*b);
      LossTerms<T> terms;
      for (const SyntheticScene* sp : scenes) {
        const SyntheticScene& scene = *sp;
        int t = static_cast<int>(rng.uniform_index(
                    static_cast<std::uint64_t>(scene.N))) + 1;
        int t_star = choose_static_frame(scene.N, t, rng);
        FrameCache<T> dy_cache = encode_window(scene, t);
        FrameCache<T> st_cache = encode_static_frame(scene, t_star);
        std::vector<Index> px = sample_pixels(scene, t, rays_per_scene, false);
        BatchContext<T> ctx = make_batch_context<T>(scene, t, px, model.cfg);
        Mat<T> depths = sample_ray_depths<T>(
            ctx.batch.size(), tc.samples_per_ray, static_cast<T>(model.cfg.u_near),
            static_cast<T>(model.cfg.u_far), true, rng);
        DynamicForward<T> fwd =
            forward_dynamic(model, ctx.batch, depths, scene.N, dy_cache, st_cache,
                            scene.poses, t_star, want_depth);
        LossTerms<T> st = dynamic_phase_losses(model, fwd, ctx, dy_cache, scene.poses,
                                               tc, rng, want_depth);
        auto named_src = st.named();
        auto named_dst = terms.named();
        for (size_t i = 0; i < named_src.size(); ++i) {
          const Var<T>& src = *named_src[i].second;
          if (!src) continue;
          Var<T>& dst = *const_cast<Var<T>*>(named_dst[i].second);
          dst = dst ? add(dst, src) : src;
        }
      }
      Var<T> total = loss_total(terms, cfg.weights);
      auto blocks = tc.freeze_static_in_phase2 ? model.dynamic_blocks()
                                               : model.all_blocks();
      finish_step(total, terms, adam, blocks, tc.static_steps + step, 2, t0);
    }

    save("ckpt_final.bin");
    write_log("train_log.csv");
  }

 private:
  void finish_step(const Var<T>& total, const LossTerms<T>& terms,
                   std::map<std::string, AdamState<T>>& adam,
                   std::vector<ParamBlock<T>*> blocks, int step, int phase,
                   std::chrono::steady_clock::time_point t0) {
    const TrainConfig& tc = cfg.train;
    double tv = static_cast<double>(total->value(0, 0));
    if (!std::isfinite(tv)) {
      save("ckpt_diverged_last_good.bin");
      throw std::runtime_error(
          "run_training: loss diverged (non-finite) at step " + std::to_string(step) +
          "; last good checkpoint: " + out_dir + "/ckpt_diverged_last_good.bin");
    }
    backward(total);
    step_blocks(blocks, adam);
    double wall_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
    if (step % tc.log_every == 0 || step == 1) record(step, phase, terms, total, wall_ms);
    if (tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0)
      save("ckpt_step" + std::to_string(step) + ".bin");
  }
};

template <class T>
std::vector<TrainLogEntry> run_training(SemanticFlowModel<T>& model, const RunConfig& cfg,
                                        const std::vector<const SyntheticScene*>& scenes,
                                        const std::string& out_dir) {
  Trainer<T> trainer(model, cfg, scenes, out_dir);
  trainer.run();
  return trainer.log;
}

}  // namespace sf
