#pragma once

// Discretized volume rendering. Densities live as (R*M)x1 column variables
// (M samples per ray, sample-major rows); quadrature reshapes them to RxM to
// run the per-ray transmittance recursion, and integration contracts sample
// values back to one row per ray.

#include "semflow/autodiff/ops.hpp"
#include "semflow/autodiff/param.hpp"
#include "semflow/camera.hpp"

namespace sf {

// Stratified depths, one row per ray: u_i = u_n + (i-1+xi)/M (u_f-u_n),
// xi ~ U[0,1) when jittered, else 0.5.
template <class T>
Mat<T> sample_ray_depths(Index R, Index M, T u_near, T u_far, bool jitter, Rng& rng) {
  require(M >= 1 && u_near > T(0) && u_near < u_far, "sample_ray_depths: bad bounds");
  Mat<T> u(R, M);
  T span = u_far - u_near;
  for (Index r = 0; r < R; ++r)
    for (Index m = 0; m < M; ++m) {
      T xi = jitter ? static_cast<T>(rng.uniform()) : T(0.5);
      u(r, m) = u_near + (static_cast<T>(m) + xi) / static_cast<T>(M) * span;
    }
  return u;
}

// Interval lengths; the last interval is capped at (u_f-u_n)/M so total
// weight stays strictly below 1 on finite-density rays.
template <class T>
Mat<T> depth_deltas(const Mat<T>& depths, T u_near, T u_far) {
  Index R = depths.rows(), M = depths.cols();
  Mat<T> d(R, M);
  for (Index r = 0; r < R; ++r) {
    for (Index m = 0; m + 1 < M; ++m) d(r, m) = depths(r, m + 1) - depths(r, m);
    d(r, M - 1) = (u_far - u_near) / static_cast<T>(M);
  }
  return d;
}

template <class T>
struct Quadrature {
  Var<T> alphas;   // RxM
  Var<T> trans;    // RxM, T_1 = 1
  Var<T> weights;  // RxM, T_i * a_i
};

// sigma is (R*M)x1 with rows grouped per ray; deltas is the constant RxM
// interval matrix.
template <class T>
Quadrature<T> quadrature(const Var<T>& sigma, const Mat<T>& deltas) {
  Index R = deltas.rows(), M = deltas.cols();
  require(sigma->cols() == 1 && sigma->rows() == R * M, "quadrature: sigma shape");
  require(sigma->value.minCoeff() >= T(0), "quadrature: negative density");
  Var<T> sd = mul(reshape(sigma, R, M), constant<T>(deltas));
  Quadrature<T> q;
  Var<T> neg_sd = scale(sd, T(-1));
  q.alphas = add_scalar(scale(exp_op(neg_sd), T(-1)), T(1));  // 1 - exp(-sigma*delta)
  q.trans = exp_op(cumsum_exclusive_rows(neg_sd));
  q.weights = mul(q.trans, q.alphas);
  return q;
}

// Sum_i w_i V_i per ray; values are (R*M)xK.
template <class T>
Var<T> integrate(const Quadrature<T>& q, const Var<T>& values) {
  return weighted_integrate(q.weights, values);
}

// Integration with weights renormalized to sum to ~1 per ray, used for
// rendered optical flow so low-opacity rays still supervise direction.
template <class T>
Var<T> integrate_normalized(const Quadrature<T>& q, const Var<T>& values, T eps = T(1e-8)) {
  Var<T> norm = rcp_eps(row_sum(q.weights), eps);
  return weighted_integrate(mul_colvec(q.weights, norm), values);
}

// Per-sample blend of the two fields (sigma and value columns are (R*M)x1 /
// (R*M)xK at shared depths): sigma_full = (1-b) sigma_st + b sigma_dy, and
// the blended integrand (1-b) sigma_st V_st + b sigma_dy V_dy rendered with
// sigma_full transmittance.
template <class T>
struct BlendResult {
  Var<T> sigma_full;      // (R*M)x1
  Quadrature<T> quad;     // from sigma_full
  Var<T> values;          // (R*M)xK blended per-sample values
};

template <class T>
BlendResult<T> blend(const Var<T>& sigma_st, const Var<T>& value_st, const Var<T>& sigma_dy,
                     const Var<T>& value_dy, const Var<T>& b, const Mat<T>& deltas,
                     T eps = T(1e-8)) {
  require(value_st->rows() == value_dy->rows() && value_st->cols() == value_dy->cols(),
          "blend: value shape mismatch");
  Var<T> one_minus_b = add_scalar(scale(b, T(-1)), T(1));
  Var<T> w_st = mul(one_minus_b, sigma_st);
  Var<T> w_dy = mul(b, sigma_dy);
  BlendResult<T> out;
  out.sigma_full = add(w_st, w_dy);
  Var<T> mixed = add(mul_colvec(value_st, w_st), mul_colvec(value_dy, w_dy));
  out.values = mul_colvec(mixed, rcp_eps(out.sigma_full, eps));
  out.quad = quadrature(out.sigma_full, deltas);
  return out;
}

}  // namespace sf
