#pragma once

#include <span>
#include <vector>

#include "tqd/decoder.hpp"
#include "tqd/tensor.hpp"

namespace tqd {

struct LossWeights {
  double lambda_reg = 1.0;
  double lambda_att = 1.0;

  /// Both finite and nonnegative, not both zero. Throws ConfigError.
  void validate() const;
};

enum class KlReduction { kRowMean, kRowSum };

struct AttentionLossOptions {
  KlReduction reduction = KlReduction::kRowMean;
  /// Adds KL(L_C || L_S) to KL(L_S || L_C).
  bool symmetric = false;
  bool stop_grad_self = false;
  bool stop_grad_cross = false;
};

inline constexpr double kLogFloor = 1e-12;

/// Row-wise softmax of A * A^T: a K x K query-similarity distribution.
Tensor gram_softmax(const Tensor& a);

/// KL(p || q) between two row-stochastic matrices, computed row by row and
/// reduced over rows. Logs are clamped at kLogFloor.
Tensor kl_rows(const Tensor& p, const Tensor& q,
               KlReduction reduction = KlReduction::kRowMean);

struct AttentionLoss {
  Tensor loss;                     // scalar, differentiable
  std::vector<double> per_layer;   // KL per decoder layer
};

/// Sum over layers of KL(gram_softmax(A_S^n) || gram_softmax(A_C^n)).
AttentionLoss attention_loss(const DecoderTrace& trace,
                             const AttentionLossOptions& options = {});

/// (1/n) sum (pred_i - target_i)^2 over equally shaped tensors.
Tensor mse_loss(const Tensor& pred, const Tensor& target);
double mse_loss(std::span<const double> pred, std::span<const double> target);

/// lambda_reg * reg + lambda_att * att.
Tensor total_loss(const Tensor& reg, const Tensor& att, const LossWeights& w);
double total_loss(double reg, double att, const LossWeights& w);

struct LossBreakdown {
  double loss_reg = 0.0;
  double loss_att = 0.0;
  double loss_all = 0.0;
  std::vector<double> per_layer_kl;
};

}  // namespace tqd
