#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tqd/decoder.hpp"
#include "tqd/tensor.hpp"

namespace tqd {

/// One dense layer, y = x W + b.
struct Linear {
  Tensor w, b;

  static Linear init(std::size_t in, std::size_t out, std::mt19937_64& rng);
  Tensor operator()(const Tensor& x) const;
};

/// A 3-layer perceptron emitting one scalar per row:
/// d -> hidden1 -> hidden2 -> 1 with ReLU between layers.
struct Mlp3 {
  Linear l1, l2, l3;

  static Mlp3 init(std::size_t in, std::size_t hidden1, std::size_t hidden2,
                   std::mt19937_64& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
};

/// Parallel weight and score branches over the decoder's clip features.
struct HeadParams {
  Mlp3 weight_branch;
  Mlp3 score_branch;
  bool score_sigmoid = false;

  /// Zero hidden sizes default to d/2 and d/4 (at least 1).
  static HeadParams init(std::size_t dim, std::size_t hidden1,
                         std::size_t hidden2, std::mt19937_64& rng);
  void collect(const std::string& prefix, NamedTensors& out) const;
};

/// Plain-value view of the head's decision for one sample.
struct ClipAssessment {
  std::vector<double> weights;  // on the simplex
  std::vector<double> scores;
  double final_score = 0.0;
};

struct HeadOutput {
  Tensor weights;      // [K x 1], softmax over clips
  Tensor scores;       // [K x 1]
  Tensor final_score;  // [1], sum_k weights_k * scores_k

  ClipAssessment assessment() const;
};

/// Applies both branches to features [K x d]. Throws DataError when K = 0.
HeadOutput head_forward(const Tensor& features, const HeadParams& params);

/// sum_k weights_k * scores_k. Throws ContractError when `weights` is off the
/// simplex by more than 1e-6 or the lengths differ.
double aggregate(std::span<const double> weights,
                 std::span<const double> scores);

}  // namespace tqd
