#pragma once

// Run configuration: network sizes, loss weights and the training schedule,
// plus a plain key=value config-file parser. Defaults are desk scale — small
// enough for a single-core end-to-end run — and every size can be raised.

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace sf {

enum class DispMode { Delta, Abs, Both };  // displacement content fed to gamma

inline DispMode parse_disp_mode(const std::string& s) {
  if (s == "delta") return DispMode::Delta;
  if (s == "abs") return DispMode::Abs;
  if (s == "both") return DispMode::Both;
  throw std::invalid_argument("disp_mode must be delta|abs|both, got " + s);
}

struct ModelConfig {
  int feature_dim = 32;     // fused encoder feature width D
  int attn_channels = 32;   // attention width C
  int heads = 4;            // attention head count H
  int trunk_width = 40;     // residual MLP width
  int trunk_blocks = 1;     // residual blocks per trunk
  int head_hidden = 40;     // 3-layer head hidden width
  int enc_c1 = 12, enc_c2 = 16, enc_c3 = 24;  // encoder pyramid channels
  int pos_freqs = 10;       // gamma(x) frequencies
  int disp_freqs = 4;       // gamma(displacement), gamma(t) frequencies
  double max_flow_step = 0.1;  // tanh bound on per-step flow offsets
  DispMode disp_mode = DispMode::Delta;
  int window = 1;           // trajectory half-width W
  bool use_attention = true;
  bool normalize_flow_weights = true;
  int num_classes = 4;
  double u_near = 1.0, u_far = 6.5;
};

struct LossWeights {
  double st_rgb = 4.0;
  double dy_rgb = 1.0;
  double full_rgb = 1.0;
  double opt = 0.02;
  double full_sem = 0.16;
  double dy_sem = 0.08;
  double st_sem = 0.08;
  double consist = 0.01;
  double depth = 0.0;  // optional, off by default
};

enum class LabelSchedule { Full, Completion, Tracking };

inline LabelSchedule parse_label_schedule(const std::string& s) {
  if (s == "full") return LabelSchedule::Full;
  if (s == "completion") return LabelSchedule::Completion;
  if (s == "tracking") return LabelSchedule::Tracking;
  throw std::invalid_argument("label_schedule must be full|completion|tracking, got " + s);
}

// Frames (1-based) whose semantic labels are visible under a schedule.
inline bool schedule_has_labels(LabelSchedule schedule, int t, int N) {
  switch (schedule) {
    case LabelSchedule::Full:
      return true;
    case LabelSchedule::Completion:
      return t <= 3 || t > N - 3;
    case LabelSchedule::Tracking:
      return t <= 3;
  }
  return true;
}

struct TrainConfig {
  int static_steps = 2000;
  int dynamic_steps = 4000;
  int batch_rays = 1024;
  double lr = 5e-4;
  double beta1 = 0.9, beta2 = 0.999;
  int samples_per_ray = 20;  // M
  LabelSchedule label_schedule = LabelSchedule::Full;
  std::uint64_t seed = 1;
  bool freeze_static_in_phase2 = false;
  int log_every = 10;
  int checkpoint_every = 1000;
  int consist_max_rays = 128;  // cap on rays fed to the consistency term
};

struct RunConfig {
  ModelConfig model;
  LossWeights weights;
  TrainConfig train;
};

// key=value file; '#' starts a comment; unknown keys are an error.
inline RunConfig load_run_config(const std::string& path) {
  RunConfig cfg;
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_run_config: cannot open " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key=value");
      continue;
    }
    auto strip = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = strip(line.substr(0, eq));
    std::string val = strip(line.substr(eq + 1));

    auto as_int = [&] { return std::stoi(val); };
    auto as_double = [&] { return std::stod(val); };
    auto as_bool = [&] {
      if (val == "true" || val == "1") return true;
      if (val == "false" || val == "0") return false;
      throw std::runtime_error(path + ": bool expected for " + key);
    };

    ModelConfig& m = cfg.model;
    LossWeights& w = cfg.weights;
    TrainConfig& t = cfg.train;
    if (key == "feature_dim") m.feature_dim = as_int();
    else if (key == "attn_channels") m.attn_channels = as_int();
    else if (key == "heads") m.heads = as_int();
    else if (key == "trunk_width") m.trunk_width = as_int();
    else if (key == "trunk_blocks") m.trunk_blocks = as_int();
    else if (key == "head_hidden") m.head_hidden = as_int();
    else if (key == "enc_c1") m.enc_c1 = as_int();
    else if (key == "enc_c2") m.enc_c2 = as_int();
    else if (key == "enc_c3") m.enc_c3 = as_int();
    else if (key == "pos_freqs") m.pos_freqs = as_int();
    else if (key == "disp_freqs") m.disp_freqs = as_int();
    else if (key == "max_flow_step") m.max_flow_step = as_double();
    else if (key == "disp_mode") m.disp_mode = parse_disp_mode(val);
    else if (key == "window") m.window = as_int();
    else if (key == "use_attention") m.use_attention = as_bool();
    else if (key == "normalize_flow_weights") m.normalize_flow_weights = as_bool();
    else if (key == "num_classes") m.num_classes = as_int();
    else if (key == "u_near") m.u_near = as_double();
    else if (key == "u_far") m.u_far = as_double();
    else if (key == "a_st_rgb") w.st_rgb = as_double();
    else if (key == "a_dy_rgb") w.dy_rgb = as_double();
    else if (key == "a_full_rgb") w.full_rgb = as_double();
    else if (key == "a_opt") w.opt = as_double();
    else if (key == "a_full_sem") w.full_sem = as_double();
    else if (key == "a_dy_sem") w.dy_sem = as_double();
    else if (key == "a_st_sem") w.st_sem = as_double();
    else if (key == "a_consist") w.consist = as_double();
    else if (key == "a_depth") w.depth = as_double();
    else if (key == "static_steps") t.static_steps = as_int();
    else if (key == "dynamic_steps") t.dynamic_steps = as_int();
    else if (key == "batch_rays") t.batch_rays = as_int();
    else if (key == "lr") t.lr = as_double();
    else if (key == "beta1") t.beta1 = as_double();
    else if (key == "beta2") t.beta2 = as_double();
    else if (key == "samples_per_ray") t.samples_per_ray = as_int();
    else if (key == "label_schedule") t.label_schedule = parse_label_schedule(val);
    else if (key == "seed") t.seed = std::stoull(val);
    else if (key == "freeze_static") t.freeze_static_in_phase2 = as_bool();
    else if (key == "log_every") t.log_every = as_int();
    else if (key == "checkpoint_every") t.checkpoint_every = as_int();
    else if (key == "consist_max_rays") t.consist_max_rays = as_int();
    else throw std::runtime_error(path + ": unknown key " + key);
  }
  if (cfg.train.batch_rays <= 0 || cfg.train.samples_per_ray <= 0)
    throw std::runtime_error(path + ": batch_rays and samples_per_ray must be positive");
  return cfg;
}

inline std::string disp_mode_name(DispMode m) {
  switch (m) {
    case DispMode::Delta: return "delta";
    case DispMode::Abs: return "abs";
    case DispMode::Both: return "both";
  }
  return "delta";
}

inline std::string label_schedule_name(LabelSchedule s) {
  switch (s) {
    case LabelSchedule::Full: return "full";
    case LabelSchedule::Completion: return "completion";
    case LabelSchedule::Tracking: return "tracking";
  }
  return "full";
}

// Writes every key accepted by load_run_config, so a run directory carries a
// config that reproduces the model it trained.
inline void save_run_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_run_config: cannot write " + path);
  f.precision(17);
  const ModelConfig& m = cfg.model;
  const LossWeights& w = cfg.weights;
  const TrainConfig& t = cfg.train;
  f << "feature_dim = " << m.feature_dim << "\n"
    << "attn_channels = " << m.attn_channels << "\n"
    << "heads = " << m.heads << "\n"
    << "trunk_width = " << m.trunk_width << "\n"
    << "trunk_blocks = " << m.trunk_blocks << "\n"
    << "head_hidden = " << m.head_hidden << "\n"
    << "enc_c1 = " << m.enc_c1 << "\n"
    << "enc_c2 = " << m.enc_c2 << "\n"
    << "enc_c3 = " << m.enc_c3 << "\n"
    << "pos_freqs = " << m.pos_freqs << "\n"
    << "disp_freqs = " << m.disp_freqs << "\n"
    << "max_flow_step = " << m.max_flow_step << "\n"
    << "disp_mode = " << disp_mode_name(m.disp_mode) << "\n"
    << "window = " << m.window << "\n"
    << "use_attention = " << (m.use_attention ? "true" : "false") << "\n"
    << "normalize_flow_weights = " << (m.normalize_flow_weights ? "true" : "false") << "\n"
    << "num_classes = " << m.num_classes << "\n"
    << "u_near = " << m.u_near << "\n"
    << "u_far = " << m.u_far << "\n"
    << "a_st_rgb = " << w.st_rgb << "\n"
    << "a_dy_rgb = " << w.dy_rgb << "\n"
    << "a_full_rgb = " << w.full_rgb << "\n"
    << "a_opt = " << w.opt << "\n"
    << "a_full_sem = " << w.full_sem << "\n"
    << "a_dy_sem = " << w.dy_sem << "\n"
    << "a_st_sem = " << w.st_sem << "\n"
    << "a_consist = " << w.consist << "\n"
    << "a_depth = " << w.depth << "\n"
    << "static_steps = " << t.static_steps << "\n"
    << "dynamic_steps = " << t.dynamic_steps << "\n"
    << "batch_rays = " << t.batch_rays << "\n"
    << "lr = " << t.lr << "\n"
    << "beta1 = " << t.beta1 << "\n"
    << "beta2 = " << t.beta2 << "\n"
    << "samples_per_ray = " << t.samples_per_ray << "\n"
    << "label_schedule = " << label_schedule_name(t.label_schedule) << "\n"
    << "seed = " << t.seed << "\n"
    << "freeze_static = " << (t.freeze_static_in_phase2 ? "true" : "false") << "\n"
    << "log_every = " << t.log_every << "\n"
    << "checkpoint_every = " << t.checkpoint_every << "\n"
    << "consist_max_rays = " << t.consist_max_rays << "\n";
  if (!f) throw std::runtime_error("save_run_config: failed writing " + path);
}

}  // namespace sf
