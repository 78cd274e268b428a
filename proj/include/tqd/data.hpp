#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tqd/tensor.hpp"

namespace tqd {

/// One sample: L pre-extracted clip features of dimension d and its score.
struct FeatureSequence {
  std::string sample_id;
  std::size_t clips = 0;
  std::size_t dim = 0;
  std::vector<double> features;  // clips * dim, row-major
  std::optional<double> label;

  // Planted structure, synthetic data only. Never read through the feature
  // path: it lives in a sidecar file.
  std::vector<double> planted_weights;
  std::vector<double> clip_quality;

  Tensor as_tensor() const;
  /// L >= 1, d >= 1, size matches, every entry finite. Throws DataError.
  void validate() const;
};

// Binary feature file, little-endian:
//   "TQDF" | u32 version (=1) | u32 L | u32 d | L*d float32 row-major
//   [ "LABL" | float64 label ]
inline constexpr std::uint32_t kFeatureFormatVersion = 1;

std::vector<std::uint8_t> encode_features(const FeatureSequence& seq);
/// Throws ParseError carrying the byte offset of the first problem.
FeatureSequence decode_features(std::span<const std::uint8_t> bytes);

void write_features(const std::filesystem::path& path,
                    const FeatureSequence& seq);
FeatureSequence load_features(const std::filesystem::path& path);
/// CSV with a header row of d column names followed by L rows of d numbers.
FeatureSequence load_features_csv(const std::filesystem::path& path);

enum class Split { kTrain, kTest };

std::string split_name(Split split);
Split parse_split(const std::string& text);

struct SampleEntry {
  std::string id;
  std::string path;  // relative to the manifest's directory
  double label = 0.0;
  Split split = Split::kTrain;
};

/// Affine label map y' = (y - offset) / scale, kept for reporting in the
/// original units.
struct LabelTransform {
  double offset = 0.0;
  double scale = 1.0;

  double apply(double y) const { return (y - offset) / scale; }
  double invert(double y) const { return y * scale + offset; }
};

struct DatasetManifest {
  std::size_t dim = 0;
  std::size_t clips = 0;
  double label_min = 0.0;
  double label_max = 0.0;
  LabelTransform transform;
  std::vector<SampleEntry> samples;
  std::filesystem::path root;  // directory the sample paths resolve against

  std::vector<const SampleEntry*> split(Split which) const;
  /// Ids unique across splits and labels inside [label_min, label_max].
  void validate() const;
  std::filesystem::path resolve(const SampleEntry& entry) const;
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path,
                    const DatasetManifest& manifest);

/// Maps labels affinely so the train split spans [0, 1]. Test labels
/// outside the train range land outside [0, 1] and are not clipped.
/// Throws RangeError when the train labels are constant.
DatasetManifest normalize_labels(const DatasetManifest& manifest);

struct SynthOptions {
  std::size_t n_train = 200;
  std::size_t n_test = 50;
  std::size_t clips = 8;
  std::size_t dim = 64;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticDataset {
  DatasetManifest manifest;
  std::vector<FeatureSequence> samples;  // manifest order
};

/// Planted-structure data: per sample w ~ Dirichlet(1) over clips and
/// q_k ~ U[0, 1]; clip k's feature is W_emb [w_k, q_k, onehot(k)] + noise
/// with one seeded W_emb per dataset; the label is sum_k w_k q_k. Features
/// are rounded to float32 so in-memory and on-disk values agree.
SyntheticDataset generate_synthetic(const SynthOptions& options);

/// Writes manifest.txt, features/<id>.tqdf and truth/<id>.truth.csv.
DatasetManifest write_synthetic(const SyntheticDataset& data,
                                const std::filesystem::path& out_dir);

inline DatasetManifest gen_synthetic(const SynthOptions& options,
                                     const std::filesystem::path& out_dir) {
  return write_synthetic(generate_synthetic(options), out_dir);
}

/// Reads the planted weights and qualities sidecar into `seq`.
void load_truth(const std::filesystem::path& path, FeatureSequence& seq);
std::filesystem::path truth_path_for(const DatasetManifest& manifest,
                                     const SampleEntry& entry);

/// A manifest with its samples loaded into memory, labels taken from the
/// manifest (so a normalized manifest yields normalized labels).
struct Dataset {
  DatasetManifest manifest;
  std::vector<FeatureSequence> train;
  std::vector<FeatureSequence> test;
};

Dataset load_dataset(const DatasetManifest& manifest, bool with_truth = false);
/// Builds a Dataset from in-memory synthetic samples without touching disk.
Dataset to_dataset(const SyntheticDataset& data);

}  // namespace tqd
