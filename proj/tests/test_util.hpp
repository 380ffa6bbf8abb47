#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "enes/autodiff.hpp"
#include "enes/random.hpp"

namespace testutil {

using enes::ad::Mat;

inline Mat random_mat(enes::Rng& rng, int rows, int cols, double lo = -1.0, double hi = 1.0) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = enes::uniform(rng, lo, hi);
  return m;
}

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Worst relative error between two matrices, measured against the largest
// entry so tiny components do not dominate.
inline double mat_rel_err(const Mat& a, const Mat& b) {
  const double scale = std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), 1e-10});
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace testutil
