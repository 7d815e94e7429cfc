#pragma once

// Convolutional image encoder: three stride-2 3x3 levels, each level
// bilinearly sampled at the query pixel and the concatenation fused by one
// affine layer into a D-channel feature. Level k has stride 2^k relative to
// the input, so full-resolution pixel coordinates are divided by the stride
// before sampling.

#include <string>
#include <vector>

#include "semflow/autodiff/nn.hpp"
#include "semflow/autodiff/ops.hpp"
#include "semflow/config.hpp"

namespace sf {

template <class T>
struct EncodedFrame {
  std::vector<Var<T>> levels;   // (Hk*Wk)xCk feature maps
  std::vector<Index> heights, widths;
};

template <class T>
void add_conv_encoder(ParamBlock<T>& block, const std::string& prefix,
                      const ModelConfig& cfg, Rng& rng) {
  auto add_conv = [&](const std::string& name, Index cin, Index cout) {
    block.add(name + ".w", init_affine<T>(9 * cin, cout, rng));
    block.add(name + ".b", init_bias<T>(9 * cin, cout, rng));
  };
  add_conv(prefix + ".l1", 3, cfg.enc_c1);
  add_conv(prefix + ".l2", cfg.enc_c1, cfg.enc_c2);
  add_conv(prefix + ".l3", cfg.enc_c2, cfg.enc_c3);
  add_affine(block, prefix + ".fuse", cfg.enc_c1 + cfg.enc_c2 + cfg.enc_c3,
             cfg.feature_dim, rng);
}

template <class T>
EncodedFrame<T> encode_frame(const ParamBlock<T>& block, const std::string& prefix,
                             const Var<T>& image, Index H, Index W) {
  EncodedFrame<T> out;
  Var<T> x = image;
  Index h = H, w = W;
  for (int level = 1; level <= 3; ++level) {
    std::string name = prefix + ".l" + std::to_string(level);
    x = relu(conv3x3(x, block.find(name + ".w"), block.find(name + ".b"), h, w, 2));
    h = conv_out_extent(h, 2);
    w = conv_out_extent(w, 2);
    out.levels.push_back(x);
    out.heights.push_back(h);
    out.widths.push_back(w);
  }
  return out;
}

// Sample the fused feature at full-resolution pixel coordinates (Sx2).
// `coords` may be a constant or a differentiable projection output.
template <class T>
Var<T> sample_encoded(const ParamBlock<T>& block, const std::string& prefix,
                      const EncodedFrame<T>& enc, const Var<T>& coords) {
  std::vector<Var<T>> parts;
  T stride = T(1);
  for (size_t k = 0; k < enc.levels.size(); ++k) {
    stride *= T(2);
    Var<T> scaled = scale(coords, T(1) / stride);
    parts.push_back(bilinear_sample(enc.levels[k], scaled, enc.heights[k], enc.widths[k]));
  }
  return affine(block, prefix + ".fuse", concat_cols(parts));
}

}  // namespace sf
