#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tqd/tensor.hpp"

namespace tqd {

/// Average (fractional) ranks, 1-based; tied values share the mean rank.
std::vector<double> average_ranks(std::span<const double> values);

/// Spearman rank correlation: Pearson correlation of the average-rank
/// vectors. Throws NumericError if either input is constant or n < 2.
double srcc(std::span<const double> pred, std::span<const double> target);

/// (1/N) sum (|y - y_hat| / (y_max - y_min))^2. Not multiplied by 100.
/// Throws RangeError when y_max <= y_min.
double relative_l2(std::span<const double> pred, std::span<const double> target,
                   double y_min, double y_max);

/// Mean diagonal entry of a K x K row-stochastic map: 1/K for the uniform map,
/// 1 for the identity. Throws ContractError when a row is off the simplex.
double diagonality(const Tensor& map);

struct EvalReport {
  double srcc = 0.0;
  double rl2_x100 = 0.0;
  std::vector<double> diagonality_per_layer;
  std::size_t n_samples = 0;

  /// Flat "key=value" lines.
  std::string to_kv() const;
  std::string csv_header() const;
  std::string csv_row() const;
};

}  // namespace tqd
