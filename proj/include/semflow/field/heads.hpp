#pragma once

// Output heads: flow attention + semantic logits for the dynamic branch, the
// static semantic head, and the geometric networks producing density, color
// and the blend weight.

#include "semflow/field/feature_agg.hpp"

namespace sf {

template <class T>
void add_flow_heads(ParamBlock<T>& block, const ModelConfig& cfg, Rng& rng) {
  Index C = cfg.attn_channels;
  require(C % cfg.heads == 0, "add_flow_heads: attn_channels must be divisible by heads");
  add_affine(block, "token_in", flow_token_width(cfg), C, rng);
  add_attention(block, "attn", C, rng);
  add_mlp3(block, "psi_o", Mlp3Spec{C, cfg.head_hidden, C}, rng);
  add_mlp3(block, "dy_sem", Mlp3Spec{C, cfg.head_hidden, cfg.num_classes}, rng);
}

template <class T>
void add_static_sem_head(ParamBlock<T>& block, const ModelConfig& cfg, Rng& rng) {
  Index st_in = cfg.feature_dim + 3 * (1 + 2 * cfg.pos_freqs);
  add_mlp3(block, "st_sem", Mlp3Spec{st_in, cfg.head_hidden, cfg.num_classes}, rng);
}

// tokens is the (S*G)xK flow feature matrix; returns SxL logits. With
// attention disabled (ablation) tokens are mean-pooled directly after the
// input projection.
template <class T>
Var<T> flow_semantic_logits(const ParamBlock<T>& block, const ModelConfig& cfg,
                            const Var<T>& tokens, Index G) {
  Var<T> x = affine(block, "token_in", tokens);
  if (cfg.use_attention) x = multi_head_attention_grouped(block, "attn", x, G, cfg.heads);
  Var<T> pooled = group_mean_rows(x, G);
  Var<T> f_sem = mlp3(block, "psi_o", pooled);
  return mlp3(block, "dy_sem", f_sem);
}

template <class T>
Var<T> static_semantic_logits(const ParamBlock<T>& block, const ModelConfig& cfg,
                              const Var<T>& static_feature, const Var<T>& x_embed) {
  return mlp3(block, "st_sem", concat_cols<T>({static_feature, x_embed}));
}

// Geometric networks. The dynamic branch outputs 5 channels
// (sigma, rgb, blend b); the static branch 4 (sigma, rgb).
template <class T>
void add_geo(ParamBlock<T>& block, const std::string& prefix, const ModelConfig& cfg,
             bool dynamic, Rng& rng) {
  Index in = cfg.feature_dim + 3 * (1 + 2 * cfg.pos_freqs);
  if (dynamic) in += 1 + 2 * cfg.disp_freqs;  // gamma(t/N)
  ResidualMlpSpec spec{in, cfg.trunk_width, dynamic ? 5 : 4, cfg.trunk_blocks};
  add_residual_mlp(block, prefix, spec, rng);
}

template <class T>
struct GeoOutput {
  Var<T> sigma;  // Sx1, >= 0
  Var<T> color;  // Sx3 in [0,1]
  Var<T> blend;  // Sx1 in [0,1]; empty for the static branch
};

template <class T>
GeoOutput<T> geo_forward(const ParamBlock<T>& block, const std::string& prefix,
                         const ModelConfig& cfg, const Var<T>& point_feature,
                         const Var<T>& x_embed, const Var<T>& t_embed, bool dynamic) {
  std::vector<Var<T>> parts{point_feature, x_embed};
  if (dynamic) parts.push_back(t_embed);
  Var<T> in = concat_cols(parts);
  ResidualMlpSpec spec{in->cols(), cfg.trunk_width, dynamic ? Index(5) : Index(4),
                       cfg.trunk_blocks};
  Var<T> raw = residual_mlp(block, prefix, spec, in);
  GeoOutput<T> out;
  out.sigma = softplus(slice_cols(raw, 0, 1));
  out.color = sigmoid(slice_cols(raw, 1, 3));
  if (dynamic) out.blend = sigmoid(slice_cols(raw, 4, 1));
  return out;
}

}  // namespace sf
