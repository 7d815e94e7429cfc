#pragma once

// Named parameter collections and the Adam optimizer.

#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "semflow/autodiff/tape.hpp"

namespace sf {

// Deterministic RNG helpers. std::mt19937 output is fixed by the standard;
// distributions are hand-rolled so sequences are identical across libstdc++
// versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(static_cast<std::uint32_t>(seed)) {}

  double uniform() {  // [0, 1), 53 random bits
    double a = static_cast<double>(gen_() >> 5);   // 27 bits
    double b = static_cast<double>(gen_() >> 6);   // 26 bits
    return (a * 67108864.0 + b) / 9007199254740992.0;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint32_t next_u32() { return gen_(); }
  // integer in [0, n)
  std::uint64_t uniform_index(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

 private:
  std::mt19937 gen_;
};

template <class T>
struct ParamBlock {
  std::string name;
  std::vector<std::string> tensor_names;
  std::vector<Var<T>> tensors;

  Var<T>& add(const std::string& tn, Mat<T> value) {
    for (const auto& existing : tensor_names)
      require(existing != tn, "ParamBlock: duplicate tensor name " + tn);
    tensor_names.push_back(tn);
    tensors.push_back(leaf<T>(std::move(value)));
    return tensors.back();
  }

  Var<T> find(const std::string& tn) const {
    for (size_t i = 0; i < tensor_names.size(); ++i)
      if (tensor_names[i] == tn) return tensors[i];
    throw std::invalid_argument("ParamBlock " + name + ": no tensor " + tn);
  }

  Index size() const {
    Index n = 0;
    for (const auto& t : tensors) n += t->value.size();
    return n;
  }
};

// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
template <class T>
Mat<T> init_affine(Index fan_in, Index fan_out, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Mat<T> w(fan_in, fan_out);
  for (Index i = 0; i < w.rows(); ++i)
    for (Index j = 0; j < w.cols(); ++j) w(i, j) = static_cast<T>(rng.uniform(-bound, bound));
  return w;
}

template <class T>
Mat<T> init_bias(Index fan_in, Index fan_out, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Mat<T> b(1, fan_out);
  for (Index j = 0; j < fan_out; ++j) b(0, j) = static_cast<T>(rng.uniform(-bound, bound));
  return b;
}

template <class T>
struct AdamState {
  long step = 0;
  T lr = T(5e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  std::vector<Mat<T>> m, v;  // one entry per tensor, shape-mirrored

  void ensure(const ParamBlock<T>& params) {
    if (!m.empty()) return;
    for (const auto& t : params.tensors) {
      m.push_back(Mat<T>::Zero(t->rows(), t->cols()));
      v.push_back(Mat<T>::Zero(t->rows(), t->cols()));
    }
  }
};

// One bias-corrected Adam update over a block. Tensors with empty grads
// (not reached by the last backward pass) are treated as zero-gradient.
template <class T>
void adam_step(AdamState<T>& state, ParamBlock<T>& params) {
  state.ensure(params);
  require(state.m.size() == params.tensors.size(), "adam_step: state/param mismatch");
  state.step += 1;
  T bc1 = T(1) - std::pow(state.beta1, static_cast<T>(state.step));
  T bc2 = T(1) - std::pow(state.beta2, static_cast<T>(state.step));
  for (size_t i = 0; i < params.tensors.size(); ++i) {
    auto& p = params.tensors[i];
    Mat<T> g = p->grad.size() != 0 ? p->grad : Mat<T>::Zero(p->rows(), p->cols());
    require(g.rows() == p->rows() && g.cols() == p->cols(), "adam_step: grad shape mismatch");
    require_finite(g, ("gradient of " + params.name + "/" + params.tensor_names[i]).c_str());
    state.m[i] = state.beta1 * state.m[i] + (T(1) - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i].array().matrix() +
                 (T(1) - state.beta2) * g.cwiseProduct(g);
    Mat<T> mhat = state.m[i] / bc1;
    Mat<T> vhat = state.v[i] / bc2;
    p->value.array() -= state.lr * mhat.array() / (vhat.array().sqrt() + state.eps);
  }
}

template <class T>
void zero_grads(ParamBlock<T>& params) {
  for (auto& t : params.tensors) zero_grad(t);
}

}  // namespace sf
