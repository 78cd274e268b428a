#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tqd/data.hpp"
#include "tqd/decoder.hpp"
#include "tqd/losses.hpp"

namespace tqd {

struct ModelConfig {
  std::size_t dim = 64;
  std::size_t queries = 8;
  std::size_t heads = 4;
  std::size_t layers = 2;
  double dropout = 0.7;
  std::size_t ffn_dim = 0;  // 0 -> 2 * dim
  double query_variance = 5.0;
  bool query_pe = true;
  PeKind pe_kind = PeKind::kSinusoidal;
  bool memory_pe = false;
  TracePoint trace_point = TracePoint::kSublayer;
  std::size_t head_hidden1 = 0;  // 0 -> dim / 2
  std::size_t head_hidden2 = 0;  // 0 -> dim / 4
  bool score_sigmoid = false;

  DecoderOptions decoder_options() const;
};

struct LossConfig {
  bool attention_loss = true;
  double lambda_reg = 1.0;
  double lambda_att = 1.0;
  KlReduction kl_reduction = KlReduction::kRowMean;
  bool kl_symmetric = false;
  bool stop_grad_self = false;
  bool stop_grad_cross = false;

  LossWeights weights() const { return {lambda_reg, lambda_att}; }
  AttentionLossOptions attention_options() const;
};

struct OptimConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 48;
  std::size_t epochs = 200;
  std::uint64_t seed = 0;
  bool normalize_labels = true;
  std::size_t threads = 1;  // ablation cells run in parallel up to this
};

/// Every hyperparameter of a run. Serializes to a sectioned key=value text
/// format; dotted keys ("train.learning_rate") address single fields.
struct TrainConfig {
  ModelConfig model;
  LossConfig loss;
  OptimConfig train;
  std::string manifest;  // data.manifest
  SynthOptions synth;

  /// Sets one field from text. Throws ConfigError for unknown keys or
  /// unparsable values.
  void set(std::string_view dotted_key, std::string_view value);
  std::string get(std::string_view dotted_key) const;
  std::vector<std::string> keys() const;

  /// Range and consistency checks. Throws ConfigError.
  void validate() const;

  std::string serialize() const;
  static TrainConfig parse(std::string_view text);
  static TrainConfig load(const std::string& path);
  void save(const std::string& path) const;
};

/// Applies "key=value" override strings in order.
void apply_overrides(TrainConfig& config,
                     const std::vector<std::string>& overrides);

}  // namespace tqd
