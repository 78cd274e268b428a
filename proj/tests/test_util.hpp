#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "tqd/ops.hpp"
#include "tqd/tensor.hpp"

namespace tqd::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -2.0,
                            double hi = 2.0, bool requires_grad = false) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline Tensor gaussian_tensor(Shape shape, std::mt19937_64& rng, double sigma,
                              bool requires_grad = false) {
  std::normal_distribution<double> dist(0.0, sigma);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// Contracts a tensor to a scalar with fixed random weights so every output
/// coordinate contributes a distinct amount to the gradient.
inline Tensor probe(const Tensor& t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(t, random_tensor(t.shape(), rng, -1.0, 1.0)));
}

/// Naive dense matrices for oracles, independent of the tape.
using Dense = std::vector<std::vector<double>>;

inline Dense to_dense(const Tensor& t) {
  Dense d(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) d[i][j] = t(i, j);
  return d;
}

}  // namespace tqd::testing
