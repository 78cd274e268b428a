#include "tqd/decoder.hpp"

#include <cmath>

#include "tqd/errors.hpp"
#include "tqd/ops.hpp"

namespace tqd {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out,
                      std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> w(fan_in * fan_out);
  for (double& v : w) v = dist(rng);
  return Tensor::from({fan_in, fan_out}, std::move(w), true);
}

Tensor sinusoidal_pe(std::size_t positions, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) {
    throw ConfigError("sinusoidal positional encoding needs an even dimension, "
                      "got " + std::to_string(dim));
  }
  std::vector<double> pe(positions * dim);
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double freq =
          std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
      const double angle = static_cast<double>(p) / freq;
      pe[p * dim + 2 * i] = std::sin(angle);
      pe[p * dim + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor::from({positions, dim}, std::move(pe));
}

QueryBank init_queries(std::size_t count, std::size_t dim, double variance,
                       std::uint64_t seed, PeKind pe_kind) {
  if (count < 1) throw ConfigError("query count must be at least 1");
  if (dim < 2) throw ConfigError("query dimension must be at least 2");
  if (!(variance > 0.0) || !std::isfinite(variance)) {
    throw ConfigError("query init variance must be positive, got " +
                      std::to_string(variance));
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, std::sqrt(variance));
  std::vector<double> emb(count * dim);
  for (double& v : emb) v = dist(rng);

  QueryBank bank;
  bank.embeddings = Tensor::from({count, dim}, std::move(emb), true);
  bank.init_variance = variance;
  bank.pe_kind = pe_kind;
  if (pe_kind == PeKind::kLearned) {
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<double> pe(count * dim);
    for (double& v : pe) v = unit(rng);
    bank.pos_encoding = Tensor::from({count, dim}, std::move(pe), true);
  } else {
    bank.pos_encoding = sinusoidal_pe(count, dim);
  }
  return bank;
}

AttentionParams AttentionParams::init(std::size_t dim, std::mt19937_64& rng) {
  AttentionParams p;
  p.wq = xavier_uniform(dim, dim, rng);
  p.wk = xavier_uniform(dim, dim, rng);
  p.wv = xavier_uniform(dim, dim, rng);
  p.wo = xavier_uniform(dim, dim, rng);
  p.bq = Tensor::zeros({dim}, true);
  p.bk = Tensor::zeros({dim}, true);
  p.bv = Tensor::zeros({dim}, true);
  p.bo = Tensor::zeros({dim}, true);
  return p;
}

void AttentionParams::collect(const std::string& prefix,
                              NamedTensors& out) const {
  out.emplace_back(prefix + "wq", wq);
  out.emplace_back(prefix + "bq", bq);
  out.emplace_back(prefix + "wk", wk);
  out.emplace_back(prefix + "bk", bk);
  out.emplace_back(prefix + "wv", wv);
  out.emplace_back(prefix + "bv", bv);
  out.emplace_back(prefix + "wo", wo);
  out.emplace_back(prefix + "bo", bo);
}

AttentionResult multi_head_attention(const Tensor& queries, const Tensor& keys,
                                     const Tensor& values,
                                     const AttentionParams& params,
                                     std::size_t heads) {
  const std::size_t dim = queries.cols();
  if (heads == 0 || dim % heads != 0) {
    throw DimensionError("model dimension " + std::to_string(dim) +
                         " is not divisible by " + std::to_string(heads) +
                         " heads");
  }
  if (keys.cols() != dim || values.cols() != dim ||
      keys.rows() != values.rows()) {
    throw DimensionError("attention: queries " + shape_str(queries.shape()) +
                         ", keys " + shape_str(keys.shape()) + ", values " +
                         shape_str(values.shape()) + " are incompatible");
  }
  const std::size_t head_dim = dim / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const std::size_t kq = queries.rows(), kv = keys.rows();

  const Tensor q = add_bias(matmul(queries, params.wq), params.bq);
  const Tensor k = add_bias(matmul(keys, params.wk), params.bk);
  const Tensor v = add_bias(matmul(values, params.wv), params.bv);

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(heads);
  std::vector<double> avg(kq * kv, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * head_dim, c1 = c0 + head_dim;
    const Tensor qh = heads == 1 ? q : slice(q, 1, c0, c1);
    const Tensor kh = heads == 1 ? k : slice(k, 1, c0, c1);
    const Tensor vh = heads == 1 ? v : slice(v, 1, c0, c1);
    const Tensor w = softmax(scale(matmul_nt(qh, kh), inv_scale), 1);
    const auto wd = w.data();
    for (std::size_t i = 0; i < wd.size(); ++i) avg[i] += wd[i];
    head_outputs.push_back(matmul(w, vh));
  }
  for (double& a : avg) a /= static_cast<double>(heads);

  const Tensor merged = heads == 1 ? head_outputs[0] : concat(head_outputs, 1);
  return {add_bias(matmul(merged, params.wo), params.bo),
          Tensor::from({kq, kv}, std::move(avg))};
}

DecoderLayerParams DecoderLayerParams::init(std::size_t dim,
                                            std::size_t ffn_dim,
                                            std::mt19937_64& rng) {
  DecoderLayerParams p;
  p.self_attn = AttentionParams::init(dim, rng);
  p.cross_attn = AttentionParams::init(dim, rng);
  p.ff1_w = xavier_uniform(dim, ffn_dim, rng);
  p.ff1_b = Tensor::zeros({ffn_dim}, true);
  p.ff2_w = xavier_uniform(ffn_dim, dim, rng);
  p.ff2_b = Tensor::zeros({dim}, true);
  for (Tensor* g : {&p.ln1_g, &p.ln2_g, &p.ln3_g}) *g = Tensor::full({dim}, 1.0, true);
  for (Tensor* b : {&p.ln1_b, &p.ln2_b, &p.ln3_b}) *b = Tensor::zeros({dim}, true);
  return p;
}

void DecoderLayerParams::collect(const std::string& prefix,
                                 NamedTensors& out) const {
  self_attn.collect(prefix + "self.", out);
  cross_attn.collect(prefix + "cross.", out);
  out.emplace_back(prefix + "ff1_w", ff1_w);
  out.emplace_back(prefix + "ff1_b", ff1_b);
  out.emplace_back(prefix + "ff2_w", ff2_w);
  out.emplace_back(prefix + "ff2_b", ff2_b);
  out.emplace_back(prefix + "ln1_g", ln1_g);
  out.emplace_back(prefix + "ln1_b", ln1_b);
  out.emplace_back(prefix + "ln2_g", ln2_g);
  out.emplace_back(prefix + "ln2_b", ln2_b);
  out.emplace_back(prefix + "ln3_g", ln3_g);
  out.emplace_back(prefix + "ln3_b", ln3_b);
}

DecoderOutput decoder_forward(const QueryBank& bank, const Tensor& memory,
                              std::span<const DecoderLayerParams> layers,
                              const DecoderOptions& options, bool training,
                              std::uint64_t seed) {
  if (!memory.defined() || memory.rank() != 2 || memory.rows() == 0) {
    throw DataError("decoder memory must be a non-empty [L x d] matrix");
  }
  if (layers.empty()) throw ConfigError("decoder needs at least one layer");
  if (memory.cols() != bank.dim()) {
    throw DimensionError("memory " + shape_str(memory.shape()) +
                         " does not match query dimension " +
                         std::to_string(bank.dim()));
  }

  const double rate = training ? options.dropout : 0.0;
  std::uint64_t stream = 0;
  auto drop = [&](const Tensor& t) {
    return rate > 0.0 ? dropout(t, rate, mix_seed(seed, stream++)) : t;
  };
  auto with_pe = [&](const Tensor& t) {
    return options.query_pe ? add(t, bank.pos_encoding) : t;
  };
  const Tensor memory_keys =
      options.memory_pe
          ? add(memory, sinusoidal_pe(memory.rows(), memory.cols()))
          : memory;

  DecoderOutput out;
  Tensor x = bank.embeddings;
  for (const auto& layer : layers) {
    const Tensor q_self = with_pe(x);
    AttentionResult sa =
        multi_head_attention(q_self, q_self, x, layer.self_attn, options.heads);
    x = layer_norm(add(x, drop(sa.output)), layer.ln1_g, layer.ln1_b);

    AttentionResult ca = multi_head_attention(with_pe(x), memory_keys, memory,
                                              layer.cross_attn, options.heads);
    const Tensor after_self = x;
    x = layer_norm(add(after_self, drop(ca.output)), layer.ln2_g, layer.ln2_b);

    const Tensor hidden =
        relu(add_bias(matmul(x, layer.ff1_w), layer.ff1_b));
    const Tensor ff = add_bias(matmul(hidden, layer.ff2_w), layer.ff2_b);

    const bool sublayer = options.trace_point == TracePoint::kSublayer;
    out.trace.self_out.push_back(sublayer ? sa.output : after_self);
    out.trace.cross_out.push_back(sublayer ? ca.output : x);
    out.trace.self_weights.push_back(std::move(sa.weights));
    out.trace.cross_weights.push_back(std::move(ca.weights));

    x = layer_norm(add(x, drop(ff)), layer.ln3_g, layer.ln3_b);
  }
  out.features = x;
  return out;
}

}  // namespace tqd
