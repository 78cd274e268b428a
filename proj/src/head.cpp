#include "tqd/head.hpp"

#include <algorithm>
#include <cmath>

#include "tqd/errors.hpp"
#include "tqd/ops.hpp"

namespace tqd {

Linear Linear::init(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return {xavier_uniform(in, out, rng), Tensor::zeros({out}, true)};
}

Tensor Linear::operator()(const Tensor& x) const {
  return add_bias(matmul(x, w), b);
}

Mlp3 Mlp3::init(std::size_t in, std::size_t hidden1, std::size_t hidden2,
                std::mt19937_64& rng) {
  return {Linear::init(in, hidden1, rng), Linear::init(hidden1, hidden2, rng),
          Linear::init(hidden2, 1, rng)};
}

Tensor Mlp3::operator()(const Tensor& x) const {
  return l3(relu(l2(relu(l1(x)))));
}

void Mlp3::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + "l1_w", l1.w);
  out.emplace_back(prefix + "l1_b", l1.b);
  out.emplace_back(prefix + "l2_w", l2.w);
  out.emplace_back(prefix + "l2_b", l2.b);
  out.emplace_back(prefix + "l3_w", l3.w);
  out.emplace_back(prefix + "l3_b", l3.b);
}

HeadParams HeadParams::init(std::size_t dim, std::size_t hidden1,
                            std::size_t hidden2, std::mt19937_64& rng) {
  if (hidden1 == 0) hidden1 = std::max<std::size_t>(1, dim / 2);
  if (hidden2 == 0) hidden2 = std::max<std::size_t>(1, dim / 4);
  HeadParams p;
  p.weight_branch = Mlp3::init(dim, hidden1, hidden2, rng);
  p.score_branch = Mlp3::init(dim, hidden1, hidden2, rng);
  return p;
}

void HeadParams::collect(const std::string& prefix, NamedTensors& out) const {
  weight_branch.collect(prefix + "weight.", out);
  score_branch.collect(prefix + "score.", out);
}

ClipAssessment HeadOutput::assessment() const {
  return {weights.to_vector(), scores.to_vector(), final_score.item()};
}

HeadOutput head_forward(const Tensor& features, const HeadParams& params) {
  if (!features.defined() || features.rank() != 2 || features.rows() == 0) {
    throw DataError("regression head needs at least one clip feature row");
  }
  HeadOutput out;
  out.weights = softmax(params.weight_branch(features), 0);
  const Tensor raw = params.score_branch(features);
  out.scores = params.score_sigmoid ? sigmoid(raw) : raw;
  out.final_score = sum(mul(out.weights, out.scores));
  return out;
}

double aggregate(std::span<const double> weights,
                 std::span<const double> scores) {
  if (weights.size() != scores.size() || weights.empty()) {
    throw ContractError("aggregate: " + std::to_string(weights.size()) +
                        " weights for " + std::to_string(scores.size()) +
                        " scores");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= -1e-6 && w <= 1.0 + 1e-6)) {
      throw ContractError("aggregate: weight outside [0, 1]");
    }
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw ContractError("aggregate: weights sum to " + std::to_string(total));
  }
  double out = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) out += weights[k] * scores[k];
  return out;
}

}  // namespace tqd
