#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tqd/config.hpp"
#include "tqd/data.hpp"
#include "tqd/metrics.hpp"
#include "tqd/model.hpp"

namespace tqd {

/// Bias-corrected Adam moments, one buffer pair per parameter.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One Adam update from the gradients currently held by `params`. Moment
/// buffers are created on the first call. Throws TrainingError naming the
/// parameter if any gradient is non-finite; nothing is updated in that case.
void adam_step(const NamedTensors& params, AdamState& state,
               double learning_rate);

void zero_grads(const NamedTensors& params);

/// Per-sample view of an evaluation pass.
struct EvalResult {
  EvalReport report;
  std::vector<double> predictions;  // normalized label scale
  std::vector<double> targets;
  std::vector<double> per_layer_kl;  // mean over samples
};

/// Eval-mode pass over `samples`. R-l2 uses [y_min, y_max]; diagonality is
/// that of the self-attention Gram-softmax map per layer, averaged.
EvalResult evaluate(const Model& model, const ModelConfig& config,
                    const std::vector<FeatureSequence>& samples, double y_min,
                    double y_max);

struct EpochLog {
  std::size_t epoch = 0;
  double loss_reg = 0.0;
  double loss_att = 0.0;
  double srcc = 0.0;
  double rl2_x100 = 0.0;
  std::vector<double> diagonality;
  std::vector<double> kl_per_layer;
};

std::string epoch_csv_header(std::size_t layers);
std::string epoch_csv_row(const EpochLog& log);

struct TrainResult {
  Model model;       // after the last completed epoch
  Model best_model;  // highest validation SRCC
  AdamState adam;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double train_label_min = 0.0;
  double train_label_max = 1.0;
  bool diverged = false;
  std::string divergence_reason;
};

/// Trains on `data.train` and validates on `data.test` (on the train split
/// when there is no test split) after every epoch. Labels are used as given;
/// normalize the manifest first if desired. Deterministic for a fixed
/// config. A non-finite loss or gradient stops training, restores the
/// parameters of the last completed epoch and sets `diverged`.
TrainResult train(const TrainConfig& config, const Dataset& data,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

// Checkpoint: versioned binary container of named float64 arrays, the
// serialized config and a small key=value metadata block.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  Model model;
  AdamState adam;
  LabelTransform label_transform;
  double train_label_min = 0.0;
  double train_label_max = 1.0;
  std::size_t epoch = 0;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void checkpoint_save(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint checkpoint_load(const std::filesystem::path& path);

/// One ablation axis: a config key and the values it takes.
struct GridAxis {
  std::string key;
  std::vector<std::string> values;
};

struct AblationRow {
  std::vector<std::pair<std::string, std::string>> settings;
  EvalReport final_report;  // after the last epoch
  EvalReport best_report;   // at the best validation epoch
  bool diverged = false;
};

/// Cartesian product of the axes (an empty grid is a single baseline run),
/// one training run per cell with shared seeds. Cells run on up to
/// config.train.threads threads.
std::vector<AblationRow> run_ablation(const TrainConfig& base,
                                      const std::vector<GridAxis>& grid,
                                      const Dataset& data);

std::string ablation_csv(const std::vector<AblationRow>& rows);

/// Parses "key=v1,v2,..." into an axis.
GridAxis parse_grid_axis(const std::string& text);

}  // namespace tqd
