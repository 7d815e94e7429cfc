#pragma once

// Differentiable operations over Var<T>. Each op builds the output value
// eagerly and registers a backward closure. Ops are batch-level: a matrix is
// a batch of rows, so one matmul covers a whole ray batch.

#include <cmath>
#include <utility>
#include <vector>

#include "semflow/autodiff/tape.hpp"

namespace sf {

// ---------------------------------------------------------------------------
// arithmetic

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a->rows() == b->rows() && a->cols() == b->cols(), "add: shape mismatch");
  auto out = make_node<T>(a->value + b->value);
  wire(out, {a, b}, [a, b](Node<T>& n) {
    accumulate_grad(a, n.grad);
    accumulate_grad(b, n.grad);
  });
  return out;
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require(a->rows() == b->rows() && a->cols() == b->cols(), "sub: shape mismatch");
  auto out = make_node<T>(a->value - b->value);
  wire(out, {a, b}, [a, b](Node<T>& n) {
    accumulate_grad(a, n.grad);
    accumulate_grad(b, Mat<T>(-n.grad));
  });
  return out;
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require(a->rows() == b->rows() && a->cols() == b->cols(), "mul: shape mismatch");
  auto out = make_node<T>(Mat<T>(a->value.cwiseProduct(b->value)));
  wire(out, {a, b}, [a, b](Node<T>& n) {
    accumulate_grad(a, Mat<T>(n.grad.cwiseProduct(b->value)));
    accumulate_grad(b, Mat<T>(n.grad.cwiseProduct(a->value)));
  });
  return out;
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  auto out = make_node<T>(Mat<T>(a->value * s));
  wire(out, {a}, [a, s](Node<T>& n) { accumulate_grad(a, Mat<T>(n.grad * s)); });
  return out;
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
  auto out = make_node<T>(Mat<T>(a->value.array() + s));
  wire(out, {a}, [a](Node<T>& n) { accumulate_grad(a, n.grad); });
  return out;
}

// a + row-broadcast bias (1xC)
template <class T>
Var<T> add_rowvec(const Var<T>& a, const Var<T>& b) {
  require(b->rows() == 1 && b->cols() == a->cols(), "add_rowvec: bias must be 1xC");
  Mat<T> v = a->value;
  v.rowwise() += b->value.row(0);
  auto out = make_node<T>(std::move(v));
  wire(out, {a, b}, [a, b](Node<T>& n) {
    accumulate_grad(a, n.grad);
    accumulate_grad(b, Mat<T>(n.grad.colwise().sum()));
  });
  return out;
}

// a (RxC) scaled per-row by c (Rx1)
template <class T>
Var<T> mul_colvec(const Var<T>& a, const Var<T>& c) {
  require(c->cols() == 1 && c->rows() == a->rows(), "mul_colvec: scale must be Rx1");
  Mat<T> v = a->value.array().colwise() * c->value.col(0).array();
  auto out = make_node<T>(std::move(v));
  wire(out, {a, c}, [a, c](Node<T>& n) {
    accumulate_grad(a, Mat<T>(n.grad.array().colwise() * c->value.col(0).array()));
    accumulate_grad(c, Mat<T>(n.grad.cwiseProduct(a->value).rowwise().sum()));
  });
  return out;
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require(a->cols() == b->rows(), "matmul: inner dimension mismatch");
  auto out = make_node<T>(Mat<T>(a->value * b->value));
  wire(out, {a, b}, [a, b](Node<T>& n) {
    accumulate_grad(a, Mat<T>(n.grad * b->value.transpose()));
    accumulate_grad(b, Mat<T>(a->value.transpose() * n.grad));
  });
  return out;
}

// ---------------------------------------------------------------------------
// elementwise nonlinearities

template <class T>
Var<T> relu(const Var<T>& a) {
  auto out = make_node<T>(Mat<T>(a->value.cwiseMax(T(0))));
  wire(out, {a}, [a](Node<T>& n) {
    Mat<T> g = (a->value.array() > T(0)).template cast<T>() * n.grad.array();
    accumulate_grad(a, g);
  });
  return out;
}

template <class T>
Var<T> softplus(const Var<T>& a) {
  // stable: max(x,0) + log1p(exp(-|x|))
  Mat<T> v = a->value.array().max(T(0)) +
             (-a->value.array().abs()).exp().log1p();
  auto out = make_node<T>(std::move(v));
  wire(out, {a}, [a](Node<T>& n) {
    Mat<T> sig = (T(1) / (T(1) + (-a->value.array()).exp())).matrix();
    accumulate_grad(a, Mat<T>(n.grad.cwiseProduct(sig)));
  });
  return out;
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  Mat<T> v = (T(1) / (T(1) + (-a->value.array()).exp())).matrix();
  auto out = make_node<T>(std::move(v));
  Mat<T> val = out->value;
  wire(out, {a}, [a, val](Node<T>& n) {
    Mat<T> g = n.grad.array() * val.array() * (T(1) - val.array());
    accumulate_grad(a, g);
  });
  return out;
}

template <class T>
Var<T> tanh_op(const Var<T>& a) {
  Mat<T> v = a->value.array().tanh().matrix();
  auto out = make_node<T>(std::move(v));
  Mat<T> val = out->value;
  wire(out, {a}, [a, val](Node<T>& n) {
    Mat<T> g = n.grad.array() * (T(1) - val.array().square());
    accumulate_grad(a, g);
  });
  return out;
}

template <class T>
Var<T> square(const Var<T>& a) {
  auto out = make_node<T>(Mat<T>(a->value.array().square().matrix()));
  wire(out, {a}, [a](Node<T>& n) {
    accumulate_grad(a, Mat<T>(T(2) * n.grad.cwiseProduct(a->value)));
  });
  return out;
}

template <class T>
Var<T> abs_op(const Var<T>& a) {
  auto out = make_node<T>(Mat<T>(a->value.cwiseAbs()));
  wire(out, {a}, [a](Node<T>& n) {
    Mat<T> s = a->value.array().sign().matrix();
    accumulate_grad(a, Mat<T>(n.grad.cwiseProduct(s)));
  });
  return out;
}

template <class T>
Var<T> exp_op(const Var<T>& a) {
  auto out = make_node<T>(Mat<T>(a->value.array().exp().matrix()));
  Mat<T> val = out->value;
  wire(out, {a}, [a, val](Node<T>& n) {
    accumulate_grad(a, Mat<T>(n.grad.cwiseProduct(val)));
  });
  return out;
}

// 1 / (a + eps), eps keeps low-opacity rays differentiable
template <class T>
Var<T> rcp_eps(const Var<T>& a, T eps) {
  Mat<T> v = (T(1) / (a->value.array() + eps)).matrix();
  auto out = make_node<T>(std::move(v));
  Mat<T> val = out->value;
  wire(out, {a, }, [a, val](Node<T>& n) {
    accumulate_grad(a, Mat<T>((-n.grad.array() * val.array().square()).matrix()));
  });
  return out;
}

// clamp with pass-through gradient inside the interval
template <class T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  auto out = make_node<T>(Mat<T>(a->value.array().max(lo).min(hi).matrix()));
  wire(out, {a}, [a, lo, hi](Node<T>& n) {
    Mat<T> inside = ((a->value.array() >= lo) && (a->value.array() <= hi))
                        .template cast<T>()
                        .matrix();
    accumulate_grad(a, Mat<T>(n.grad.cwiseProduct(inside)));
  });
  return out;
}

// ---------------------------------------------------------------------------
// shape ops

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_cols: empty input");
  Index rows = parts[0]->rows();
  Index cols = 0;
  for (const auto& p : parts) {
    require(p->rows() == rows, "concat_cols: row mismatch");
    cols += p->cols();
  }
  Mat<T> v(rows, cols);
  Index off = 0;
  for (const auto& p : parts) {
    v.middleCols(off, p->cols()) = p->value;
    off += p->cols();
  }
  auto out = make_node<T>(std::move(v));
  bool needs = false;
  for (const auto& p : parts) {
    out->inputs.push_back(p);
    needs = needs || p->requires_grad;
  }
  if (needs) {
    out->requires_grad = true;
    std::vector<Var<T>> ps = parts;
    out->backward = [ps](Node<T>& n) {
      Index off = 0;
      for (const auto& p : ps) {
        accumulate_grad(p, Mat<T>(n.grad.middleCols(off, p->cols())));
        off += p->cols();
      }
    };
  }
  return out;
}

template <class T>
Var<T> slice_cols(const Var<T>& a, Index start, Index count) {
  require(start >= 0 && start + count <= a->cols(), "slice_cols: out of range");
  auto out = make_node<T>(Mat<T>(a->value.middleCols(start, count)));
  wire(out, {a}, [a, start, count](Node<T>& n) {
    if (!a->requires_grad) return;
    if (a->grad.size() == 0) a->grad.setZero(a->rows(), a->cols());
    a->grad.middleCols(start, count) += n.grad;
  });
  return out;
}

// gather rows by index; backward is scatter-add
template <class T>
Var<T> gather_rows(const Var<T>& a, std::vector<Index> idx) {
  Mat<T> v(static_cast<Index>(idx.size()), a->cols());
  for (Index i = 0; i < v.rows(); ++i) {
    require(idx[i] >= 0 && idx[i] < a->rows(), "gather_rows: index out of range");
    v.row(i) = a->value.row(idx[i]);
  }
  auto out = make_node<T>(std::move(v));
  wire(out, {a}, [a, idx = std::move(idx)](Node<T>& n) {
    if (!a->requires_grad) return;
    if (a->grad.size() == 0) a->grad.setZero(a->rows(), a->cols());
    for (Index i = 0; i < n.grad.rows(); ++i) a->grad.row(idx[i]) += n.grad.row(i);
  });
  return out;
}

// ---------------------------------------------------------------------------
// reductions

template <class T>
Var<T> sum_all(const Var<T>& a) {
  Mat<T> v(1, 1);
  v(0, 0) = a->value.sum();
  auto out = make_node<T>(std::move(v));
  wire(out, {a}, [a](Node<T>& n) {
    accumulate_grad(a, Mat<T>(Mat<T>::Constant(a->rows(), a->cols(), n.grad(0, 0))));
  });
  return out;
}

template <class T>
Var<T> mean_all(const Var<T>& a) {
  T inv = T(1) / T(a->value.size());
  Mat<T> v(1, 1);
  v(0, 0) = a->value.sum() * inv;
  auto out = make_node<T>(std::move(v));
  wire(out, {a}, [a, inv](Node<T>& n) {
    accumulate_grad(a, Mat<T>(Mat<T>::Constant(a->rows(), a->cols(), n.grad(0, 0) * inv)));
  });
  return out;
}

template <class T>
Var<T> row_sum(const Var<T>& a) {
  auto out = make_node<T>(Mat<T>(a->value.rowwise().sum()));
  wire(out, {a}, [a](Node<T>& n) {
    accumulate_grad(a, Mat<T>(n.grad.col(0).replicate(1, a->cols())));
  });
  return out;
}

// mean over each group of G consecutive rows: (S*G)xC -> SxC
template <class T>
Var<T> group_mean_rows(const Var<T>& a, Index G) {
  require(G >= 1 && a->rows() % G == 0, "group_mean_rows: rows not divisible by group");
  Index S = a->rows() / G;
  Mat<T> v = Mat<T>::Zero(S, a->cols());
  for (Index s = 0; s < S; ++s)
    v.row(s) = a->value.middleRows(s * G, G).colwise().mean();
  auto out = make_node<T>(std::move(v));
  wire(out, {a}, [a, G](Node<T>& n) {
    if (!a->requires_grad) return;
    if (a->grad.size() == 0) a->grad.setZero(a->rows(), a->cols());
    T inv = T(1) / T(G);
    for (Index s = 0; s < n.grad.rows(); ++s)
      a->grad.middleRows(s * G, G).rowwise() += (n.grad.row(s) * inv).eval();
  });
  return out;
}

// exclusive prefix sum along each row
template <class T>
Var<T> cumsum_exclusive_rows(const Var<T>& a) {
  Mat<T> v(a->rows(), a->cols());
  for (Index r = 0; r < a->rows(); ++r) {
    T acc = 0;
    for (Index c = 0; c < a->cols(); ++c) {
      v(r, c) = acc;
      acc += a->value(r, c);
    }
  }
  auto out = make_node<T>(std::move(v));
  wire(out, {a}, [a](Node<T>& n) {
    Mat<T> g(n.grad.rows(), n.grad.cols());
    for (Index r = 0; r < n.grad.rows(); ++r) {
      T acc = 0;
      for (Index c = n.grad.cols() - 1; c >= 0; --c) {
        g(r, c) = acc;  // d/da_c = sum of grads at positions > c
        acc += n.grad(r, c);
      }
    }
    accumulate_grad(a, g);
  });
  return out;
}

// ---------------------------------------------------------------------------
// softmax / crossentropy

template <class T>
Mat<T> softmax_rows_value(const Mat<T>& x) {
  Mat<T> p(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    T m = x.row(r).maxCoeff();
    Eigen::Array<T, 1, Eigen::Dynamic> e = (x.row(r).array() - m).exp();
    p.row(r) = (e / e.sum()).matrix();
  }
  return p;
}

template <class T>
Var<T> softmax_rows(const Var<T>& a) {
  auto out = make_node<T>(softmax_rows_value(a->value));
  Mat<T> p = out->value;
  wire(out, {a}, [a, p](Node<T>& n) {
    Mat<T> g(p.rows(), p.cols());
    for (Index r = 0; r < p.rows(); ++r) {
      T dot = n.grad.row(r).cwiseProduct(p.row(r)).sum();
      g.row(r) = (p.row(r).array() * (n.grad.row(r).array() - dot)).matrix();
    }
    accumulate_grad(a, g);
  });
  return out;
}

// per-row crossentropy: -log softmax(logits)[target]; output Sx1
template <class T>
Var<T> crossentropy_rows(const Var<T>& logits, std::vector<int> targets) {
  require(static_cast<Index>(targets.size()) == logits->rows(),
          "crossentropy_rows: target count mismatch");
  Mat<T> p = softmax_rows_value(logits->value);
  Mat<T> v(logits->rows(), 1);
  for (Index r = 0; r < logits->rows(); ++r) {
    require(targets[r] >= 0 && targets[r] < logits->cols(),
            "crossentropy_rows: target class out of range");
    v(r, 0) = -std::log(std::max(p(r, targets[r]), std::numeric_limits<T>::min()));
  }
  auto out = make_node<T>(std::move(v));
  wire(out, {logits}, [logits, p, targets = std::move(targets)](Node<T>& n) {
    Mat<T> g = p;
    for (Index r = 0; r < g.rows(); ++r) {
      g(r, targets[r]) -= T(1);
      g.row(r) *= n.grad(r, 0);
    }
    accumulate_grad(logits, g);
  });
  return out;
}

// ---------------------------------------------------------------------------
// sinusoidal positional embedding
//
// Layout, grouped per input dimension d:
//   [ x_d (if include_input), sin(2^0 x_d), cos(2^0 x_d), ...,
//     sin(2^{F-1} x_d), cos(2^{F-1} x_d) ]
// Output width = D * (2F + include_input).

template <class T>
Mat<T> sinusoidal_embed_value(const Mat<T>& x, int num_freqs, bool include_input) {
  Index D = x.cols();
  Index per = 2 * num_freqs + (include_input ? 1 : 0);
  Mat<T> v(x.rows(), D * per);
  for (Index d = 0; d < D; ++d) {
    Index off = d * per;
    if (include_input) v.col(off++) = x.col(d);
    for (int k = 0; k < num_freqs; ++k) {
      T f = static_cast<T>(std::ldexp(1.0, k));
      v.col(off++) = (x.col(d).array() * f).sin().matrix();
      v.col(off++) = (x.col(d).array() * f).cos().matrix();
    }
  }
  return v;
}

template <class T>
Var<T> sinusoidal_embed(const Var<T>& x, int num_freqs, bool include_input) {
  require(num_freqs >= 0, "sinusoidal_embed: num_freqs must be >= 0");
  auto out = make_node<T>(sinusoidal_embed_value(x->value, num_freqs, include_input));
  wire(out, {x}, [x, num_freqs, include_input](Node<T>& n) {
    Index D = x->cols();
    Index per = 2 * num_freqs + (include_input ? 1 : 0);
    Mat<T> g = Mat<T>::Zero(x->rows(), D);
    for (Index d = 0; d < D; ++d) {
      Index off = d * per;
      if (include_input) g.col(d) += n.grad.col(off++);
      for (int k = 0; k < num_freqs; ++k) {
        T f = static_cast<T>(std::ldexp(1.0, k));
        auto xs = (x->value.col(d).array() * f);
        g.col(d).array() += n.grad.col(off).array() * f * xs.cos();
        g.col(d).array() -= n.grad.col(off + 1).array() * f * xs.sin();
        off += 2;
      }
    }
    accumulate_grad(x, g);
  });
  return out;
}

// ---------------------------------------------------------------------------
// grouped multi-head softmax attention
//
// Q, K, V are (S*G)xC: S independent groups of G rows each (one group per
// ray sample, rows = trajectory timestamps). Per group and head h:
//   A^(h) = softmax(Q^(h) K^(h)T / sqrt(dk)) V^(h),  dk = C / H
// Heads are concatenated back to C columns in index order.

template <class T>
Var<T> grouped_attention(const Var<T>& Q, const Var<T>& K, const Var<T>& V,
                         Index G, int heads) {
  Index C = Q->cols();
  require(K->cols() == C && V->cols() == C, "grouped_attention: channel mismatch");
  require(Q->rows() == K->rows() && Q->rows() == V->rows(),
          "grouped_attention: row mismatch");
  require(heads >= 1 && C % heads == 0,
          "grouped_attention: channels not divisible by head count");
  require(G >= 1 && Q->rows() % G == 0, "grouped_attention: rows not divisible by group");
  Index S = Q->rows() / G;
  Index dk = C / heads;
  T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(dk));

  Mat<T> out_v(Q->rows(), C);
  // softmax matrices kept for backward: per group, heads stacked (G x G*H)
  auto probs = std::make_shared<std::vector<Mat<T>>>();
  probs->reserve(S);
  for (Index s = 0; s < S; ++s) {
    Mat<T> pstack(G, G * heads);
    for (int h = 0; h < heads; ++h) {
      auto Qb = Q->value.block(s * G, h * dk, G, dk);
      auto Kb = K->value.block(s * G, h * dk, G, dk);
      auto Vb = V->value.block(s * G, h * dk, G, dk);
      Mat<T> scores = (Qb * Kb.transpose()) * inv_sqrt_dk;
      Mat<T> P = softmax_rows_value(scores);
      out_v.block(s * G, h * dk, G, dk) = P * Vb;
      pstack.middleCols(h * G, G) = P;
    }
    probs->push_back(std::move(pstack));
  }
  auto out = make_node<T>(std::move(out_v));
  wire(out, {Q, K, V}, [Q, K, V, probs, S, G, dk, heads, inv_sqrt_dk](Node<T>& n) {
    Mat<T> gQ = Mat<T>::Zero(Q->rows(), Q->cols());
    Mat<T> gK = Mat<T>::Zero(Q->rows(), Q->cols());
    Mat<T> gV = Mat<T>::Zero(Q->rows(), Q->cols());
    for (Index s = 0; s < S; ++s) {
      for (int h = 0; h < heads; ++h) {
        auto Qb = Q->value.block(s * G, h * dk, G, dk);
        auto Kb = K->value.block(s * G, h * dk, G, dk);
        auto Vb = V->value.block(s * G, h * dk, G, dk);
        auto dO = n.grad.block(s * G, h * dk, G, dk);
        const Mat<T> P = (*probs)[s].middleCols(h * G, G);
        gV.block(s * G, h * dk, G, dk) += P.transpose() * dO;
        Mat<T> dP = dO * Vb.transpose();
        // softmax backward per row
        Mat<T> dScores(G, G);
        for (Index r = 0; r < G; ++r) {
          T dot = dP.row(r).cwiseProduct(P.row(r)).sum();
          dScores.row(r) = (P.row(r).array() * (dP.row(r).array() - dot)).matrix();
        }
        dScores *= inv_sqrt_dk;
        gQ.block(s * G, h * dk, G, dk) += dScores * Kb;
        gK.block(s * G, h * dk, G, dk) += dScores.transpose() * Qb;
      }
    }
    accumulate_grad(Q, gQ);
    accumulate_grad(K, gK);
    accumulate_grad(V, gV);
  });
  return out;
}

// ---------------------------------------------------------------------------
// bilinear sampling from a feature map stored as (H*W)xC, row-major pixels.
// Coordinates are in map pixel units; out-of-bounds coordinates clamp to the
// border (gradient w.r.t. a clamped coordinate is zero).

template <class T>
Var<T> bilinear_sample(const Var<T>& map, const Var<T>& coords, Index H, Index W) {
  require(map->rows() == H * W, "bilinear_sample: map shape mismatch");
  require(coords->cols() == 2, "bilinear_sample: coords must be Sx2 (u,v)");
  Index S = coords->rows();
  Index C = map->cols();

  struct Corner {
    Index i00, i01, i10, i11;
    T fx, fy;
    bool in_x, in_y;  // true when the coordinate was not clamped
  };
  auto corners = std::make_shared<std::vector<Corner>>(S);
  Mat<T> v(S, C);
  for (Index s = 0; s < S; ++s) {
    T u = coords->value(s, 0);
    T vv = coords->value(s, 1);
    bool in_x = (u >= T(0) && u <= T(W - 1));
    bool in_y = (vv >= T(0) && vv <= T(H - 1));
    u = std::min(std::max(u, T(0)), T(W - 1));
    vv = std::min(std::max(vv, T(0)), T(H - 1));
    Index x0 = std::min(static_cast<Index>(std::floor(u)), W - 2 >= 0 ? W - 2 : 0);
    Index y0 = std::min(static_cast<Index>(std::floor(vv)), H - 2 >= 0 ? H - 2 : 0);
    x0 = std::max<Index>(x0, 0);
    y0 = std::max<Index>(y0, 0);
    Index x1 = std::min(x0 + 1, W - 1);
    Index y1 = std::min(y0 + 1, H - 1);
    T fx = u - static_cast<T>(x0);
    T fy = vv - static_cast<T>(y0);
    Corner c{y0 * W + x0, y0 * W + x1, y1 * W + x0, y1 * W + x1, fx, fy, in_x, in_y};
    (*corners)[s] = c;
    v.row(s) = (T(1) - fy) * ((T(1) - fx) * map->value.row(c.i00) + fx * map->value.row(c.i01)) +
               fy * ((T(1) - fx) * map->value.row(c.i10) + fx * map->value.row(c.i11));
  }
  auto out = make_node<T>(std::move(v));
  wire(out, {map, coords}, [map, coords, corners, H, W](Node<T>& n) {
    const Index S = coords->rows();
    if (map->requires_grad && map->grad.size() == 0)
      map->grad.setZero(map->rows(), map->cols());
    Mat<T> gc = Mat<T>::Zero(S, 2);
    for (Index s = 0; s < S; ++s) {
      const auto& c = (*corners)[s];
      const auto dO = n.grad.row(s);
      T fx = c.fx, fy = c.fy;
      if (map->requires_grad) {
        map->grad.row(c.i00) += (T(1) - fy) * (T(1) - fx) * dO;
        map->grad.row(c.i01) += (T(1) - fy) * fx * dO;
        map->grad.row(c.i10) += fy * (T(1) - fx) * dO;
        map->grad.row(c.i11) += fy * fx * dO;
      }
      if (coords->requires_grad) {
        // d/dfx and d/dfy of the blend
        auto rx = (T(1) - fy) * (map->value.row(c.i01) - map->value.row(c.i00)) +
                  fy * (map->value.row(c.i11) - map->value.row(c.i10));
        auto ry = (T(1) - fx) * (map->value.row(c.i10) - map->value.row(c.i00)) +
                  fx * (map->value.row(c.i11) - map->value.row(c.i01));
        if (c.in_x) gc(s, 0) = dO.cwiseProduct(rx).sum();
        if (c.in_y) gc(s, 1) = dO.cwiseProduct(ry).sum();
      }
    }
    accumulate_grad(coords, gc);
  });
  return out;
}

// ---------------------------------------------------------------------------
// 3x3 same-padding strided convolution via im2col. Input (H*W)xCin,
// weight (9*Cin)xCout, bias 1xCout. Output (Ho*Wo)xCout with
// Ho = ceil(H/stride), Wo = ceil(W/stride).

inline Index conv_out_extent(Index n, Index stride) { return (n + stride - 1) / stride; }

template <class T>
Var<T> conv3x3(const Var<T>& input, const Var<T>& weight, const Var<T>& bias,
               Index H, Index W, Index stride) {
  Index Cin = input->cols();
  require(input->rows() == H * W, "conv3x3: input shape mismatch");
  require(weight->rows() == 9 * Cin, "conv3x3: weight shape mismatch");
  require(bias->rows() == 1 && bias->cols() == weight->cols(), "conv3x3: bias shape");
  Index Ho = conv_out_extent(H, stride);
  Index Wo = conv_out_extent(W, stride);

  auto patches = std::make_shared<Mat<T>>(Ho * Wo, 9 * Cin);
  patches->setZero();
  for (Index oy = 0; oy < Ho; ++oy) {
    for (Index ox = 0; ox < Wo; ++ox) {
      Index row = oy * Wo + ox;
      Index cy = oy * stride, cx = ox * stride;
      for (Index ky = 0; ky < 3; ++ky) {
        Index iy = cy + ky - 1;
        if (iy < 0 || iy >= H) continue;
        for (Index kx = 0; kx < 3; ++kx) {
          Index ix = cx + kx - 1;
          if (ix < 0 || ix >= W) continue;
          patches->row(row).segment((ky * 3 + kx) * Cin, Cin) =
              input->value.row(iy * W + ix);
        }
      }
    }
  }
  Mat<T> v = (*patches) * weight->value;
  v.rowwise() += bias->value.row(0);
  auto out = make_node<T>(std::move(v));
  wire(out, {input, weight, bias},
       [input, weight, bias, patches, H, W, Ho, Wo, stride, Cin](Node<T>& n) {
         accumulate_grad(weight, Mat<T>(patches->transpose() * n.grad));
         accumulate_grad(bias, Mat<T>(n.grad.colwise().sum()));
         if (!input->requires_grad) return;
         Mat<T> dpatch = n.grad * weight->value.transpose();
         if (input->grad.size() == 0) input->grad.setZero(input->rows(), input->cols());
         for (Index oy = 0; oy < Ho; ++oy) {
           for (Index ox = 0; ox < Wo; ++ox) {
             Index row = oy * Wo + ox;
             Index cy = oy * stride, cx = ox * stride;
             for (Index ky = 0; ky < 3; ++ky) {
               Index iy = cy + ky - 1;
               if (iy < 0 || iy >= H) continue;
               for (Index kx = 0; kx < 3; ++kx) {
                 Index ix = cx + kx - 1;
                 if (ix < 0 || ix >= W) continue;
                 input->grad.row(iy * W + ix) +=
                     dpatch.row(row).segment((ky * 3 + kx) * Cin, Cin);
               }
             }
           }
         }
       });
  return out;
}

// ---------------------------------------------------------------------------
// volume-rendering helpers

// weighted per-ray reduction: weights RxM, values (R*M)xK -> RxK
// out[r] = sum_m w[r,m] * v[r*M+m]
template <class T>
Var<T> weighted_integrate(const Var<T>& weights, const Var<T>& values) {
  Index R = weights->rows();
  Index M = weights->cols();
  require(values->rows() == R * M, "weighted_integrate: sample count mismatch");
  Index K = values->cols();
  Mat<T> v = Mat<T>::Zero(R, K);
  for (Index r = 0; r < R; ++r)
    for (Index m = 0; m < M; ++m) v.row(r) += weights->value(r, m) * values->value.row(r * M + m);
  auto out = make_node<T>(std::move(v));
  wire(out, {weights, values}, [weights, values, R, M](Node<T>& n) {
    if (weights->requires_grad) {
      Mat<T> gw(R, M);
      for (Index r = 0; r < R; ++r)
        for (Index m = 0; m < M; ++m)
          gw(r, m) = n.grad.row(r).cwiseProduct(values->value.row(r * M + m)).sum();
      accumulate_grad(weights, gw);
    }
    if (values->requires_grad) {
      Mat<T> gv(R * M, values->cols());
      for (Index r = 0; r < R; ++r)
        for (Index m = 0; m < M; ++m) gv.row(r * M + m) = weights->value(r, m) * n.grad.row(r);
      accumulate_grad(values, gv);
    }
  });
  return out;
}

// row-major reshape; the value is copied but the gradient maps one-to-one.
template <class T>
Var<T> reshape(const Var<T>& a, Index rows, Index cols) {
  require(rows * cols == a->value.size(), "reshape: element count mismatch");
  Mat<T> v = Eigen::Map<const Mat<T>>(a->value.data(), rows, cols);
  auto out = make_node<T>(std::move(v));
  wire(out, {a}, [a](Node<T>& n) {
    accumulate_grad(a, Mat<T>(Eigen::Map<const Mat<T>>(n.grad.data(), a->rows(), a->cols())));
  });
  return out;
}

// interleave G equally shaped SxC matrices into (S*G)xC so that the rows of
// sample s occupy the contiguous block [s*G, (s+1)*G) — the layout grouped
// ops expect.
template <class T>
Var<T> interleave_rows(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "interleave_rows: no inputs");
  Index S = parts[0]->rows(), C = parts[0]->cols();
  Index G = static_cast<Index>(parts.size());
  for (const auto& p : parts)
    require(p->rows() == S && p->cols() == C, "interleave_rows: shape mismatch");
  Mat<T> v(S * G, C);
  for (Index g = 0; g < G; ++g)
    for (Index s = 0; s < S; ++s) v.row(s * G + g) = parts[g]->value.row(s);
  auto out = make_node<T>(std::move(v));
  bool any = false;
  for (const auto& p : parts) {
    out->inputs.push_back(p);
    any = any || p->requires_grad;
  }
  if (any) {
    out->requires_grad = true;
    out->backward = [parts, S, G](Node<T>& n) {
      for (Index g = 0; g < G; ++g) {
        Mat<T> gp(S, parts[0]->cols());
        for (Index s = 0; s < S; ++s) gp.row(s) = n.grad.row(s * G + g);
        accumulate_grad(parts[static_cast<size_t>(g)], gp);
      }
    };
  }
  return out;
}

// pinhole projection of world points. pose is camera-to-world: rotation Rcw
// (columns = camera axes in world space) and camera center in world units.
// Output Sx3: (u, v, z_cam) with z clamped to z_min for stability; rows with
// z <= 0 are behind the camera (caller masks them via the returned z column).
template <class T>
Var<T> pinhole_project(const Var<T>& pts, const Mat<T>& rot_cw, const Vec<T>& center,
                       T fx, T fy, T cx, T cy, T z_min = T(1e-4)) {
  require(pts->cols() == 3, "pinhole_project: points must be Sx3");
  Index S = pts->rows();
  Mat<T> Rwc = rot_cw.transpose();
  Mat<T> cam = (pts->value.rowwise() - center.transpose()) * Rwc.transpose();
  Mat<T> v(S, 3);
  auto zc = std::make_shared<Vec<T>>(S);
  for (Index s = 0; s < S; ++s) {
    T z = std::max(cam(s, 2), z_min);
    (*zc)(s) = z;
    v(s, 0) = fx * cam(s, 0) / z + cx;
    v(s, 1) = fy * cam(s, 1) / z + cy;
    v(s, 2) = cam(s, 2);
  }
  auto out = make_node<T>(std::move(v));
  wire(out, {pts}, [pts, Rwc, cam, zc, fx, fy, z_min](Node<T>& n) {
    Index S = pts->rows();
    Mat<T> gcam = Mat<T>::Zero(S, 3);
    for (Index s = 0; s < S; ++s) {
      T z = (*zc)(s);
      bool clamped = cam(s, 2) < z_min;
      T du = n.grad(s, 0), dv = n.grad(s, 1), dz = n.grad(s, 2);
      gcam(s, 0) = du * fx / z;
      gcam(s, 1) = dv * fy / z;
      T gz = dz;
      if (!clamped) gz += -du * fx * cam(s, 0) / (z * z) - dv * fy * cam(s, 1) / (z * z);
      gcam(s, 2) = gz;
    }
    accumulate_grad(pts, Mat<T>(gcam * Rwc));
  });
  return out;
}

}  // namespace sf
