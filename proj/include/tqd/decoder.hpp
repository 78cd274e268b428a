#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tqd/tensor.hpp"

namespace tqd {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

enum class PeKind { kSinusoidal, kLearned };

/// Which activation of each decoder layer is recorded as the self- and
/// cross-attention output used by the attention loss.
enum class TracePoint {
  kSublayer,  // raw attention sublayer output, before residual and norm
  kNormed,    // output of the residual + LayerNorm that follows the sublayer
};

/// PE[p, 2i] = sin(p / 10000^(2i/d)), PE[p, 2i+1] = cos(p / 10000^(2i/d)).
/// Throws ConfigError for odd `dim`.
Tensor sinusoidal_pe(std::size_t positions, std::size_t dim);

/// Learnable action queries plus the positional encoding added to them.
struct QueryBank {
  Tensor embeddings;    // [K x d], learnable
  Tensor pos_encoding;  // [K x d], fixed unless PeKind::kLearned
  double init_variance = 1.0;
  PeKind pe_kind = PeKind::kSinusoidal;

  std::size_t count() const { return embeddings.rows(); }
  std::size_t dim() const { return embeddings.cols(); }
};

/// Draws embeddings i.i.d. from N(0, variance). A learned PE starts from
/// N(0, 1) draws of the same generator; a sinusoidal one is fixed.
QueryBank init_queries(std::size_t count, std::size_t dim, double variance,
                       std::uint64_t seed,
                       PeKind pe_kind = PeKind::kSinusoidal);

/// Projections of one multi-head attention block. Weights act on the right
/// (y = x W + b) and are d x d; head h owns columns [h*d/H, (h+1)*d/H).
struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;

  static AttentionParams init(std::size_t dim, std::mt19937_64& rng);
  void collect(const std::string& prefix, NamedTensors& out) const;
};

struct AttentionResult {
  Tensor output;   // [Kq x d]
  Tensor weights;  // [Kq x Kv], head-averaged, detached
};

/// Scaled dot-product attention with `heads` heads, scaling 1/sqrt(d/H).
AttentionResult multi_head_attention(const Tensor& queries, const Tensor& keys,
                                     const Tensor& values,
                                     const AttentionParams& params,
                                     std::size_t heads);

inline AttentionResult multi_head_attention(const Tensor& queries,
                                            const Tensor& keys_values,
                                            const AttentionParams& params,
                                            std::size_t heads) {
  return multi_head_attention(queries, keys_values, keys_values, params, heads);
}

struct DecoderLayerParams {
  AttentionParams self_attn;
  AttentionParams cross_attn;
  Tensor ff1_w, ff1_b, ff2_w, ff2_b;
  Tensor ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;

  static DecoderLayerParams init(std::size_t dim, std::size_t ffn_dim,
                                 std::mt19937_64& rng);
  void collect(const std::string& prefix, NamedTensors& out) const;
};

struct DecoderOptions {
  std::size_t heads = 4;
  double dropout = 0.7;
  bool query_pe = true;
  bool memory_pe = false;
  TracePoint trace_point = TracePoint::kSublayer;
};

/// Per-layer activations kept for the attention loss and diagnostics.
struct DecoderTrace {
  std::vector<Tensor> self_out;       // A_S^n, [K x d], in the graph
  std::vector<Tensor> cross_out;      // A_C^n, [K x d], in the graph
  std::vector<Tensor> self_weights;   // [K x K], detached
  std::vector<Tensor> cross_weights;  // [K x L], detached

  std::size_t layers() const { return self_out.size(); }
};

struct DecoderOutput {
  Tensor features;  // [K x d]
  DecoderTrace trace;
};

/// Runs the query decoder against clip-feature memory [L x d]. Per layer:
///
///   x <- LN(x + Drop(SelfAttn(q = k = x + pe, v = x)))
///   x <- LN(x + Drop(CrossAttn(q = x + pe, k = mem (+ mem_pe), v = mem)))
///   x <- LN(x + Drop(FFN(x)))
///
/// The residual in the second line carries the self-attention output past
/// the cross-attention. Dropout masks derive from `seed` and are drawn only
/// when `training` is set.
DecoderOutput decoder_forward(const QueryBank& bank, const Tensor& memory,
                              std::span<const DecoderLayerParams> layers,
                              const DecoderOptions& options, bool training,
                              std::uint64_t seed);

/// Mixes a base seed with a stream index (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Xavier-uniform [fan_in x fan_out] weight matrix, requires grad.
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out,
                      std::mt19937_64& rng);

}  // namespace tqd
