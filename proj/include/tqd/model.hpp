#pragma once

#include <cstdint>
#include <vector>

#include "tqd/config.hpp"
#include "tqd/decoder.hpp"
#include "tqd/head.hpp"
#include "tqd/losses.hpp"

namespace tqd {

/// Query bank, decoder stack and weight-score head of one network.
struct Model {
  QueryBank queries;
  std::vector<DecoderLayerParams> layers;
  HeadParams head;

  static Model init(const ModelConfig& config, std::uint64_t seed);

  /// Learnable tensors in a stable order with stable names.
  NamedTensors parameters() const;
  /// Deep copy: fresh leaves holding the same values.
  Model clone() const;
};

struct ModelOutput {
  DecoderOutput decoder;
  HeadOutput head;
};

ModelOutput forward(const Model& model, const ModelConfig& config,
                    const Tensor& memory, bool training, std::uint64_t seed);

/// Loss of one sample, scaled by `weight` (1/B for a batch mean).
struct SampleLoss {
  Tensor total;  // weight * (lambda_reg * (pred - y)^2 + lambda_att * att)
  double reg = 0.0;
  double att = 0.0;
  std::vector<double> per_layer_kl;
};

SampleLoss sample_loss(const ModelOutput& out, double label,
                       const LossConfig& config, double weight = 1.0);

}  // namespace tqd
