#pragma once

// Finite-difference gradient verification. Runs the loss twice per probed
// coordinate with a central difference and compares against the analytic
// gradient from the tape. Intended for double precision.

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "semflow/autodiff/param.hpp"

namespace sf {

struct GradCheckEntry {
  std::string tensor;
  Index row = 0, col = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradCheckReport {
  bool passed = true;
  double worst_rel_error = 0;
  std::vector<GradCheckEntry> worst;  // sorted by rel_error, descending
  int checked = 0;
};

// f must rebuild the graph from current parameter values and return the
// scalar loss. Probes `per_tensor` random coordinates of each tensor.
template <class T>
GradCheckReport gradcheck(const std::function<Var<T>()>& f, ParamBlock<T>& params,
                          T h, T tol, int per_tensor, Rng& rng) {
  GradCheckReport report;

  Var<T> loss = f();
  require_finite(loss->value, "gradcheck loss");
  backward(loss);
  std::vector<Mat<T>> analytic;
  for (auto& t : params.tensors)
    analytic.push_back(t->grad.size() != 0 ? t->grad : Mat<T>::Zero(t->rows(), t->cols()));

  for (size_t ti = 0; ti < params.tensors.size(); ++ti) {
    auto& t = params.tensors[ti];
    int probes = std::min<int>(per_tensor, static_cast<int>(t->value.size()));
    for (int p = 0; p < probes; ++p) {
      Index r = static_cast<Index>(rng.uniform_index(t->rows()));
      Index c = static_cast<Index>(rng.uniform_index(t->cols()));
      T saved = t->value(r, c);
      t->value(r, c) = saved + h;
      T fp = f()->value(0, 0);
      t->value(r, c) = saved - h;
      T fm = f()->value(0, 0);
      t->value(r, c) = saved;
      require(std::isfinite(fp) && std::isfinite(fm), "gradcheck: non-finite evaluation");
      double num = (fp - fm) / (2.0 * h);
      double ana = analytic[ti](r, c);
      double rel = std::abs(ana - num) / std::max(1.0, std::abs(num));
      GradCheckEntry e{params.name + "/" + params.tensor_names[ti], r, c, ana, num, rel};
      report.checked += 1;
      report.worst_rel_error = std::max(report.worst_rel_error, rel);
      if (rel > tol) report.passed = false;
      report.worst.push_back(e);
    }
  }
  std::sort(report.worst.begin(), report.worst.end(),
            [](const GradCheckEntry& a, const GradCheckEntry& b) {
              return a.rel_error > b.rel_error;
            });
  if (report.worst.size() > 10) report.worst.resize(10);
  return report;
}

}  // namespace sf
