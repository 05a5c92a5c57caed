#pragma once

#include <cmath>
#include <vector>

#include "sc/tensor.hpp"

namespace sc {
namespace test {

inline Tensor tensor1d(std::vector<float> v) {
  const int n = static_cast<int>(v.size());
  return Tensor::from_vector({n}, std::move(v));
}

inline Tensor tensor2d(int rows, int cols, std::vector<float> v) {
  return Tensor::from_vector({rows, cols}, std::move(v));
}

// single-image single-channel spatial map, shape [1,H,W,1]
inline Tensor image1(int h, int w, std::vector<float> v) {
  return Tensor::from_vector({1, h, w, 1}, std::move(v));
}

inline bool approx_eq(double a, double b, double tol) { return std::fabs(a - b) <= tol; }

inline double max_abs_diff(const Tensor& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::fabs(static_cast<double>(a.data()[i]) - b[static_cast<size_t>(i)]));
  return worst;
}

}  // namespace test
}  // namespace sc
