#pragma once

// Dense row-major matrices used as the universal value carrier. A "vector"
// is a 1xN or Nx1 matrix; batches are laid out one sample per row.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace sf {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using Matf = Mat<float>;
using Matd = Mat<double>;

using Index = Eigen::Index;

template <class T>
bool all_finite(const Mat<T>& m) {
  return m.allFinite();
}

template <class T>
void require_finite(const Mat<T>& m, const char* what) {
  if (!m.allFinite()) {
    throw std::runtime_error(std::string("non-finite values in ") + what);
  }
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace sf
