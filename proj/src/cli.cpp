#include "tqd/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>

#include "tqd/config.hpp"
#include "tqd/data.hpp"
#include "tqd/errors.hpp"
#include "tqd/export.hpp"
#include "tqd/trainer.hpp"

namespace tqd {
namespace {

namespace fs = std::filesystem;

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "Config file (sectioned key = value)");
  cmd->add_option("--out", flags.out_dir, "Output directory");
  cmd->add_option("--seed", flags.seed, "Seed override");
  cmd->add_option("--set", flags.overrides, "Config override key=value (repeatable)");
}

// File values, then --seed, then --set overrides.
TrainConfig resolve_config(const CommonFlags& flags, const char* seed_key) {
  TrainConfig config =
      flags.config_path.empty() ? TrainConfig{} : TrainConfig::load(flags.config_path);
  if (flags.seed) config.set(seed_key, std::to_string(*flags.seed));
  apply_overrides(config, flags.overrides);
  return config;
}

fs::path require_out(const CommonFlags& flags) {
  if (flags.out_dir.empty()) throw ConfigError("--out DIR is required");
  fs::create_directories(flags.out_dir);
  return flags.out_dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

DatasetManifest manifest_for(const TrainConfig& config, const std::string& data_flag) {
  const std::string path = data_flag.empty() ? config.manifest : data_flag;
  if (path.empty()) throw ConfigError("no dataset: pass --data or set data.manifest");
  return read_manifest(path);
}

// Labels in the checkpoint's normalized units, whatever the manifest holds.
DatasetManifest align_labels(DatasetManifest m, const LabelTransform& target) {
  for (auto& s : m.samples) s.label = target.apply(m.transform.invert(s.label));
  m.label_min = target.apply(m.transform.invert(m.label_min));
  m.label_max = target.apply(m.transform.invert(m.label_max));
  m.transform = target;
  return m;
}

FeatureSequence find_sample(const Checkpoint& ckpt, const std::string& data_flag,
                            const std::string& sample_id) {
  const DatasetManifest m =
      align_labels(manifest_for(ckpt.config, data_flag), ckpt.label_transform);
  for (const auto& entry : m.samples) {
    if (entry.id != sample_id) continue;
    const auto file = m.resolve(entry);
    FeatureSequence seq = file.extension() == ".csv" ? load_features_csv(file)
                                                      : load_features(file);
    seq.sample_id = entry.id;
    seq.label = entry.label;
    return seq;
  }
  throw DataError("sample '" + sample_id + "' is not in the manifest");
}

int cmd_gen_synth(const CommonFlags& flags, std::ostream& out) {
  TrainConfig config = resolve_config(flags, "synth.seed");
  const fs::path dir = require_out(flags);
  const DatasetManifest m = gen_synthetic(config.synth, dir);
  out << "wrote " << m.samples.size() << " samples to " << (dir / "manifest.txt").string()
      << "\n";
  return kExitOk;
}

int cmd_train(const CommonFlags& flags, const std::string& data_flag,
              std::ostream& out) {
  TrainConfig config = resolve_config(flags, "train.seed");
  if (!data_flag.empty()) config.manifest = data_flag;
  config.validate();
  const fs::path dir = require_out(flags);
  DatasetManifest manifest = manifest_for(config, data_flag);
  if (config.train.normalize_labels) manifest = normalize_labels(manifest);
  const Dataset data = load_dataset(manifest);

  std::ofstream log(dir / "epochs.csv", std::ios::trunc);
  log << epoch_csv_header(config.model.layers) << "\n";
  const TrainResult result = train(config, data, [&](const EpochLog& e) {
    log << epoch_csv_row(e) << "\n";
    log.flush();
  });

  Checkpoint ckpt{config, result.model, result.adam, manifest.transform,
                  result.train_label_min, result.train_label_max, result.log.size()};
  checkpoint_save(dir / "checkpoint.tqdc", ckpt);
  Checkpoint best{config, result.best_model, result.adam, manifest.transform,
                  result.train_label_min, result.train_label_max, result.best_epoch};
  checkpoint_save(dir / "best.tqdc", best);
  config.save((dir / "config.ini").string());

  if (result.diverged) {
    throw TrainingError("training diverged after epoch " +
                        std::to_string(result.log.size()) + ": " +
                        result.divergence_reason +
                        "; last good checkpoint written");
  }
  const auto& last = result.log.back();
  out << "epochs=" << result.log.size() << " best_epoch=" << result.best_epoch
      << " srcc=" << last.srcc << " rl2_x100=" << last.rl2_x100 << "\n";
  return kExitOk;
}

int cmd_eval(const CommonFlags& flags, const std::string& checkpoint_path,
             const std::string& data_flag, const std::string& split,
             std::ostream& out) {
  const Checkpoint ckpt = checkpoint_load(checkpoint_path);
  const DatasetManifest m =
      align_labels(manifest_for(ckpt.config, data_flag), ckpt.label_transform);
  const Dataset data = load_dataset(m);
  const auto& samples = parse_split(split) == Split::kTrain ? data.train : data.test;
  const EvalResult r = evaluate(ckpt.model, ckpt.config.model, samples,
                                ckpt.train_label_min, ckpt.train_label_max);
  out << r.report.to_kv();
  if (!flags.out_dir.empty()) {
    const fs::path dir = require_out(flags);
    write_text(dir / "eval.txt", r.report.to_kv());
    write_text(dir / "eval.csv", r.report.csv_header() + "\n" + r.report.csv_row() + "\n");
  }
  return kExitOk;
}

int cmd_ablate(const CommonFlags& flags, const std::string& data_flag,
               const std::vector<std::string>& grid_specs, std::ostream& out) {
  TrainConfig config = resolve_config(flags, "train.seed");
  config.validate();
  const fs::path dir = require_out(flags);
  std::vector<GridAxis> grid;
  for (const auto& g : grid_specs) grid.push_back(parse_grid_axis(g));
  DatasetManifest manifest = manifest_for(config, data_flag);
  if (config.train.normalize_labels) manifest = normalize_labels(manifest);
  const Dataset data = load_dataset(manifest);
  const auto rows = run_ablation(config, grid, data);
  const std::string csv = ablation_csv(rows);
  write_text(dir / "ablation.csv", csv);
  out << csv;
  return kExitOk;
}

int cmd_export_attention(const CommonFlags& flags, const std::string& checkpoint_path,
                         const std::string& data_flag, const std::string& sample_id,
                         std::ostream& out) {
  const Checkpoint ckpt = checkpoint_load(checkpoint_path);
  const FeatureSequence seq = find_sample(ckpt, data_flag, sample_id);
  const fs::path dir = require_out(flags);
  const ModelOutput result = forward(ckpt.model, ckpt.config.model, seq.as_tensor(), false, 0);
  const auto& trace = result.decoder.trace;
  for (std::size_t n = 0; n < trace.layers(); ++n) {
    const std::string stem = "layer" + std::to_string(n + 1);
    const Tensor l_s = gram_softmax(trace.self_out[n].detach());
    const Tensor l_c = gram_softmax(trace.cross_out[n].detach());
    write_map_csv(dir / (stem + "_self.csv"), l_s);
    write_pgm(dir / (stem + "_self.pgm"), l_s);
    write_map_csv(dir / (stem + "_cross.csv"), l_c);
    write_pgm(dir / (stem + "_cross.pgm"), l_c);
  }
  out << "exported " << trace.layers() << " layers for " << sample_id << "\n";
  return kExitOk;
}

int cmd_export_clips(const CommonFlags& flags, const std::string& checkpoint_path,
                     const std::string& data_flag, const std::string& sample_id,
                     std::ostream& out) {
  const Checkpoint ckpt = checkpoint_load(checkpoint_path);
  const FeatureSequence seq = find_sample(ckpt, data_flag, sample_id);
  const fs::path dir = require_out(flags);
  const ModelOutput result = forward(ckpt.model, ckpt.config.model, seq.as_tensor(), false, 0);
  const std::string csv = clip_table_csv(result.head.assessment());
  write_text(dir / (sample_id + "_clips.csv"), csv);
  out << csv;
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Query-based temporal decoder for long-term action quality assessment"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string data_flag, checkpoint_path, sample_id, split = "test";
  std::vector<std::string> grid_specs;

  auto* gen = app.add_subcommand("gen-synth", "Generate a planted-structure synthetic dataset");
  add_common(gen, flags);

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  add_common(train_cmd, flags);
  train_cmd->add_option("--data", data_flag, "Dataset manifest");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval_cmd, flags);
  eval_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  eval_cmd->add_option("--data", data_flag, "Dataset manifest");
  eval_cmd->add_option("--split", split, "train or test");

  auto* ablate = app.add_subcommand("ablate", "Run an ablation grid");
  add_common(ablate, flags);
  ablate->add_option("--data", data_flag, "Dataset manifest");
  ablate->add_option("--grid", grid_specs, "Axis key=v1,v2,... (repeatable)");

  auto* export_att = app.add_subcommand("export-attention",
                                        "Export per-layer self/cross Gram-softmax maps");
  add_common(export_att, flags);
  export_att->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  export_att->add_option("--data", data_flag, "Dataset manifest");
  export_att->add_option("--sample", sample_id, "Sample id")->required();

  auto* export_clips = app.add_subcommand("export-clips", "Export per-clip weights and scores");
  add_common(export_clips, flags);
  export_clips->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  export_clips->add_option("--data", data_flag, "Dataset manifest");
  export_clips->add_option("--sample", sample_id, "Sample id")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_synth(flags, out);
    if (train_cmd->parsed()) return cmd_train(flags, data_flag, out);
    if (eval_cmd->parsed()) return cmd_eval(flags, checkpoint_path, data_flag, split, out);
    if (ablate->parsed()) return cmd_ablate(flags, data_flag, grid_specs, out);
    if (export_att->parsed()) {
      return cmd_export_attention(flags, checkpoint_path, data_flag, sample_id, out);
    }
    if (export_clips->parsed()) {
      return cmd_export_clips(flags, checkpoint_path, data_flag, sample_id, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace tqd
