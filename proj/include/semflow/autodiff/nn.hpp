#pragma once

// Network building blocks: affine layers, residual MLPs, 3-layer heads and
// multi-head self attention, all parameterized through ParamBlock.

#include <string>
#include <vector>

#include "semflow/autodiff/ops.hpp"
#include "semflow/autodiff/param.hpp"

namespace sf {

template <class T>
void add_affine(ParamBlock<T>& block, const std::string& prefix, Index in, Index out,
                Rng& rng) {
  block.add(prefix + ".w", init_affine<T>(in, out, rng));
  block.add(prefix + ".b", init_bias<T>(in, out, rng));
}

template <class T>
Var<T> affine(const ParamBlock<T>& block, const std::string& prefix, const Var<T>& x) {
  return add_rowvec(matmul(x, block.find(prefix + ".w")), block.find(prefix + ".b"));
}

// ---------------------------------------------------------------------------
// Residual MLP: input projection, `blocks` residual units (two affine layers
// with ReLU and a skip connection), output projection.

struct ResidualMlpSpec {
  Index in = 0;
  Index width = 128;
  Index out = 0;
  int blocks = 4;
};

template <class T>
void add_residual_mlp(ParamBlock<T>& block, const std::string& prefix,
                      const ResidualMlpSpec& spec, Rng& rng) {
  add_affine(block, prefix + ".in", spec.in, spec.width, rng);
  for (int b = 0; b < spec.blocks; ++b) {
    add_affine(block, prefix + ".blk" + std::to_string(b) + ".fc1", spec.width, spec.width, rng);
    add_affine(block, prefix + ".blk" + std::to_string(b) + ".fc2", spec.width, spec.width, rng);
  }
  add_affine(block, prefix + ".out", spec.width, spec.out, rng);
}

template <class T>
Var<T> residual_mlp(const ParamBlock<T>& block, const std::string& prefix,
                    const ResidualMlpSpec& spec, const Var<T>& x) {
  require(x->cols() == spec.in, "residual_mlp: input width mismatch");
  Var<T> h = relu(affine(block, prefix + ".in", x));
  for (int b = 0; b < spec.blocks; ++b) {
    std::string bp = prefix + ".blk" + std::to_string(b);
    Var<T> z = relu(affine(block, bp + ".fc1", h));
    z = affine(block, bp + ".fc2", z);
    h = relu(add(h, z));
  }
  return affine(block, prefix + ".out", h);
}

// ---------------------------------------------------------------------------
// Three fully connected layers with ReLU (the semantic-head shape).

struct Mlp3Spec {
  Index in = 0;
  Index hidden = 64;
  Index out = 0;
};

template <class T>
void add_mlp3(ParamBlock<T>& block, const std::string& prefix, const Mlp3Spec& spec,
              Rng& rng) {
  add_affine(block, prefix + ".fc1", spec.in, spec.hidden, rng);
  add_affine(block, prefix + ".fc2", spec.hidden, spec.hidden, rng);
  add_affine(block, prefix + ".fc3", spec.hidden, spec.out, rng);
}

template <class T>
Var<T> mlp3(const ParamBlock<T>& block, const std::string& prefix, const Var<T>& x) {
  Var<T> h = relu(affine(block, prefix + ".fc1", x));
  h = relu(affine(block, prefix + ".fc2", h));
  return affine(block, prefix + ".fc3", h);
}

// ---------------------------------------------------------------------------
// Multi-head self attention over an NxC token matrix (single group), and the
// grouped form used per ray sample. Projections W_q, W_k, W_v are CxC.

template <class T>
void add_attention(ParamBlock<T>& block, const std::string& prefix, Index C, Rng& rng) {
  // W_q starts at zero so attention opens as exact uniform pooling and the
  // optimizer only has to learn deviations from the mean; consuming the rng
  // either way keeps downstream initialization identical.
  Mat<T> wq = init_affine<T>(C, C, rng);
  wq.setZero();
  block.add(prefix + ".wq", std::move(wq));
  block.add(prefix + ".wk", init_affine<T>(C, C, rng));
  block.add(prefix + ".wv", init_affine<T>(C, C, rng));
}

// X is (S*G)xC, S groups of G rows; heads concatenated in index order.
template <class T>
Var<T> multi_head_attention_grouped(const ParamBlock<T>& block, const std::string& prefix,
                                    const Var<T>& X, Index G, int heads) {
  Var<T> Q = matmul(X, block.find(prefix + ".wq"));
  Var<T> K = matmul(X, block.find(prefix + ".wk"));
  Var<T> V = matmul(X, block.find(prefix + ".wv"));
  return grouped_attention(Q, K, V, G, heads);
}

template <class T>
Var<T> multi_head_attention(const ParamBlock<T>& block, const std::string& prefix,
                            const Var<T>& X, int heads) {
  return multi_head_attention_grouped(block, prefix, X, X->rows(), heads);
}

}  // namespace sf
