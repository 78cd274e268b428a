#include "tqd/losses.hpp"

#include <cmath>
#include <string>

#include "tqd/errors.hpp"
#include "tqd/ops.hpp"

namespace tqd {

void LossWeights::validate() const {
  for (double v : {lambda_reg, lambda_att}) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ConfigError("loss weights must be finite and nonnegative");
    }
  }
  if (lambda_reg == 0.0 && lambda_att == 0.0) {
    throw ConfigError("lambda_reg and lambda_att cannot both be zero");
  }
}

Tensor gram_softmax(const Tensor& a) {
  if (a.rank() != 2 || a.rows() == 0) {
    throw DimensionError("gram_softmax needs a non-empty [K x d] matrix, got " +
                         shape_str(a.shape()));
  }
  for (double v : a.data()) {
    if (!std::isfinite(v)) throw NumericError("gram_softmax: non-finite input");
  }
  return softmax(matmul_nt(a, a), 1);
}

Tensor kl_rows(const Tensor& p, const Tensor& q, KlReduction reduction) {
  if (p.shape() != q.shape() || p.rank() != 2) {
    throw DimensionError("kl_rows: maps " + shape_str(p.shape()) + " and " +
                         shape_str(q.shape()) + " differ");
  }
  const Tensor terms =
      mul(p, sub(log_clamped(p, kLogFloor), log_clamped(q, kLogFloor)));
  const Tensor total = sum(terms);
  return reduction == KlReduction::kRowMean
             ? scale(total, 1.0 / static_cast<double>(p.rows()))
             : total;
}

AttentionLoss attention_loss(const DecoderTrace& trace,
                             const AttentionLossOptions& options) {
  const std::size_t n = trace.self_out.size();
  if (n == 0 || trace.cross_out.size() != n) {
    throw ContractError("attention_loss: trace needs N >= 1 layers with both "
                        "self and cross outputs");
  }
  const std::size_t k = trace.self_out[0].rows();
  AttentionLoss result;
  Tensor total;
  for (std::size_t layer = 0; layer < n; ++layer) {
    Tensor a_s = trace.self_out[layer];
    Tensor a_c = trace.cross_out[layer];
    if (a_s.rows() != k || a_c.rows() != k) {
      throw ContractError("attention_loss: layer " + std::to_string(layer) +
                          " has a different query count");
    }
    if (options.stop_grad_self) a_s = a_s.detach();
    if (options.stop_grad_cross) a_c = a_c.detach();
    const Tensor l_s = gram_softmax(a_s);
    const Tensor l_c = gram_softmax(a_c);
    Tensor kl = kl_rows(l_s, l_c, options.reduction);
    if (options.symmetric) kl = add(kl, kl_rows(l_c, l_s, options.reduction));
    result.per_layer.push_back(kl.item());
    total = total.defined() ? add(total, kl) : kl;
  }
  result.loss = total;
  return result;
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.size() != target.size() || pred.size() == 0) {
    throw ContractError("mse_loss: prediction has " +
                        std::to_string(pred.size()) + " entries, target has " +
                        std::to_string(target.size()));
  }
  const Tensor t = target.shape() == pred.shape()
                       ? target
                       : reshape(target, pred.shape());
  return mean(square(sub(pred, t)));
}

double mse_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size() || pred.empty()) {
    throw ContractError("mse_loss: prediction has " +
                        std::to_string(pred.size()) + " entries, target has " +
                        std::to_string(target.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    acc += (pred[i] - target[i]) * (pred[i] - target[i]);
  }
  return acc / static_cast<double>(pred.size());
}

Tensor total_loss(const Tensor& reg, const Tensor& att, const LossWeights& w) {
  return add(scale(reg, w.lambda_reg), scale(att, w.lambda_att));
}

double total_loss(double reg, double att, const LossWeights& w) {
  return w.lambda_reg * reg + w.lambda_att * att;
}

}  // namespace tqd
