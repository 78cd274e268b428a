#include "tqd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "tqd/errors.hpp"
#include "tqd/format.hpp"

namespace tqd {

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return values[a] < values[b];
  });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    // Positions i..j (0-based) tie; their 1-based ranks average to this.
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = rank;
    i = j + 1;
  }
  return ranks;
}

double srcc(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) {
    throw ContractError("srcc: length mismatch " + std::to_string(pred.size()) +
                        " vs " + std::to_string(target.size()));
  }
  if (pred.size() < 2) throw NumericError("srcc needs at least 2 samples");
  const auto p = average_ranks(pred);
  const auto q = average_ranks(target);
  const double n = static_cast<double>(p.size());
  const double p_mean = std::accumulate(p.begin(), p.end(), 0.0) / n;
  const double q_mean = std::accumulate(q.begin(), q.end(), 0.0) / n;
  double num = 0.0, pp = 0.0, qq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    num += (p[i] - p_mean) * (q[i] - q_mean);
    pp += (p[i] - p_mean) * (p[i] - p_mean);
    qq += (q[i] - q_mean) * (q[i] - q_mean);
  }
  if (pp == 0.0 || qq == 0.0) {
    throw NumericError("srcc undefined: constant input vector");
  }
  return std::clamp(num / std::sqrt(pp * qq), -1.0, 1.0);
}

double relative_l2(std::span<const double> pred, std::span<const double> target,
                   double y_min, double y_max) {
  if (!(y_max > y_min)) {
    throw RangeError("relative_l2: label range is empty (y_max <= y_min)");
  }
  if (pred.size() != target.size() || pred.empty()) {
    throw ContractError("relative_l2: length mismatch or empty input");
  }
  const double range = y_max - y_min;
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = std::abs(pred[i] - target[i]) / range;
    acc += r * r;
  }
  return acc / static_cast<double>(pred.size());
}

double diagonality(const Tensor& map) {
  if (map.rank() != 2 || map.rows() != map.cols() || map.rows() == 0) {
    throw DimensionError("diagonality needs a square map, got " +
                         shape_str(map.shape()));
  }
  const std::size_t k = map.rows();
  const auto d = map.data();
  double diag = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (d[i * k + j] < -1e-12) {
        throw ContractError("diagonality: negative map entry");
      }
      row += d[i * k + j];
    }
    if (std::abs(row - 1.0) > 1e-6) {
      throw ContractError("diagonality: row " + std::to_string(i) +
                          " sums to " + std::to_string(row));
    }
    diag += d[i * k + i];
  }
  return diag / static_cast<double>(k);
}

std::string EvalReport::to_kv() const {
  std::ostringstream out;
  out << "n_samples=" << n_samples << "\n";
  out << "srcc=" << format_double(srcc) << "\n";
  out << "rl2_x100=" << format_double(rl2_x100) << "\n";
  for (std::size_t i = 0; i < diagonality_per_layer.size(); ++i) {
    out << "diag_layer" << i + 1 << "=" << format_double(diagonality_per_layer[i])
        << "\n";
  }
  return out.str();
}

std::string EvalReport::csv_header() const {
  std::string h = "n_samples,srcc,rl2_x100";
  for (std::size_t i = 0; i < diagonality_per_layer.size(); ++i) {
    h += ",diag_layer" + std::to_string(i + 1);
  }
  return h;
}

std::string EvalReport::csv_row() const {
  std::string r = std::to_string(n_samples) + "," + format_double(srcc) + "," +
                  format_double(rl2_x100);
  for (double d : diagonality_per_layer) r += "," + format_double(d);
  return r;
}

}  // namespace tqd
