#include "tqd/model.hpp"

#include <random>

#include "tqd/ops.hpp"

namespace tqd {

Model Model::init(const ModelConfig& config, std::uint64_t seed) {
  Model m;
  m.queries = init_queries(config.queries, config.dim, config.query_variance,
                           mix_seed(seed, 0), config.pe_kind);
  std::mt19937_64 rng(mix_seed(seed, 1));
  const std::size_t ffn = config.ffn_dim ? config.ffn_dim : 2 * config.dim;
  for (std::size_t i = 0; i < config.layers; ++i) {
    m.layers.push_back(DecoderLayerParams::init(config.dim, ffn, rng));
  }
  m.head = HeadParams::init(config.dim, config.head_hidden1,
                            config.head_hidden2, rng);
  m.head.score_sigmoid = config.score_sigmoid;
  return m;
}

NamedTensors Model::parameters() const {
  NamedTensors out;
  out.emplace_back("queries.embeddings", queries.embeddings);
  if (queries.pe_kind == PeKind::kLearned) {
    out.emplace_back("queries.pos_encoding", queries.pos_encoding);
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].collect("layer" + std::to_string(i) + ".", out);
  }
  head.collect("head.", out);
  return out;
}

Model Model::clone() const {
  Model copy = *this;
  auto dup = [](Tensor& t) {
    t = Tensor::from(t.shape(), t.to_vector(), t.requires_grad());
  };
  dup(copy.queries.embeddings);
  dup(copy.queries.pos_encoding);
  for (auto& layer : copy.layers) {
    for (AttentionParams* a : {&layer.self_attn, &layer.cross_attn}) {
      for (Tensor* t : {&a->wq, &a->bq, &a->wk, &a->bk, &a->wv, &a->bv, &a->wo, &a->bo}) {
        dup(*t);
      }
    }
    for (Tensor* t : {&layer.ff1_w, &layer.ff1_b, &layer.ff2_w, &layer.ff2_b,
                      &layer.ln1_g, &layer.ln1_b, &layer.ln2_g, &layer.ln2_b,
                      &layer.ln3_g, &layer.ln3_b}) {
      dup(*t);
    }
  }
  for (Mlp3* mlp : {&copy.head.weight_branch, &copy.head.score_branch}) {
    for (Linear* l : {&mlp->l1, &mlp->l2, &mlp->l3}) {
      dup(l->w);
      dup(l->b);
    }
  }
  return copy;
}

ModelOutput forward(const Model& model, const ModelConfig& config,
                    const Tensor& memory, bool training, std::uint64_t seed) {
  ModelOutput out;
  out.decoder = decoder_forward(model.queries, memory, model.layers,
                                config.decoder_options(), training, seed);
  out.head = head_forward(out.decoder.features, model.head);
  return out;
}

SampleLoss sample_loss(const ModelOutput& out, double label,
                       const LossConfig& config, double weight) {
  SampleLoss s;
  const Tensor reg = mse_loss(out.head.final_score, Tensor::scalar(label));
  s.reg = reg.item();
  Tensor total = scale(reg, config.lambda_reg);
  // The KL is always measured for logging; it joins the objective only when
  // the attention loss is switched on.
  AttentionLoss att = attention_loss(out.decoder.trace, config.attention_options());
  s.att = att.loss.item();
  s.per_layer_kl = std::move(att.per_layer);
  if (config.attention_loss && config.lambda_att != 0.0) {
    total = total_loss(reg, att.loss, config.weights());
  }
  s.total = scale(total, weight);
  return s;
}

}  // namespace tqd
