#include "tqd/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <set>
#include <sstream>

#include "tqd/errors.hpp"
#include "tqd/format.hpp"

namespace tqd {
namespace {

constexpr char kMagic[4] = {'T', 'Q', 'D', 'F'};
constexpr char kLabelTag[4] = {'L', 'A', 'B', 'L'};
constexpr std::size_t kHeaderBytes = 16;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[at + i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.emplace_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

Tensor FeatureSequence::as_tensor() const {
  return Tensor::from({clips, dim}, features);
}

void FeatureSequence::validate() const {
  if (clips == 0 || dim == 0) {
    throw DataError("sample '" + sample_id + "' has an empty feature matrix");
  }
  if (features.size() != clips * dim) {
    throw DataError("sample '" + sample_id + "' declares " +
                    std::to_string(clips) + "x" + std::to_string(dim) +
                    " but holds " + std::to_string(features.size()) + " values");
  }
  for (double v : features) {
    if (!std::isfinite(v)) {
      throw DataError("sample '" + sample_id + "' has a non-finite feature");
    }
  }
}

std::vector<std::uint8_t> encode_features(const FeatureSequence& seq) {
  seq.validate();
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + 4 * seq.features.size() + 12);
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kFeatureFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(seq.clips));
  put_u32(out, static_cast<std::uint32_t>(seq.dim));
  for (double v : seq.features) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  if (seq.label) {
    out.insert(out.end(), kLabelTag, kLabelTag + 4);
    put_u64(out, std::bit_cast<std::uint64_t>(*seq.label));
  }
  return out;
}

FeatureSequence decode_features(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) {
    throw ParseError("feature file header truncated", bytes.size());
  }
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ParseError("bad magic, expected TQDF", 0);
  }
  const auto version = get_u32(bytes, 4);
  if (version != kFeatureFormatVersion) {
    throw ParseError("unsupported feature format version " +
                         std::to_string(version),
                     4);
  }
  FeatureSequence seq;
  seq.clips = get_u32(bytes, 8);
  seq.dim = get_u32(bytes, 12);
  if (seq.clips == 0) throw ParseError("clip count L is zero", 8);
  if (seq.dim == 0) throw ParseError("feature dimension d is zero", 12);

  const std::size_t count = seq.clips * seq.dim;
  const std::size_t payload_end = kHeaderBytes + 4 * count;
  if (bytes.size() < payload_end) {
    throw ParseError("payload truncated: header declares " +
                         std::to_string(seq.clips) + "x" +
                         std::to_string(seq.dim) + " float32 values",
                     bytes.size());
  }
  seq.features.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = kHeaderBytes + 4 * i;
    const float v = std::bit_cast<float>(get_u32(bytes, at));
    if (!std::isfinite(v)) throw ParseError("non-finite feature value", at);
    seq.features[i] = v;
  }

  std::size_t at = payload_end;
  if (at < bytes.size()) {
    if (bytes.size() - at < 4 || std::memcmp(bytes.data() + at, kLabelTag, 4) != 0) {
      throw ParseError("unknown trailing section", at);
    }
    if (bytes.size() - at < 12) throw ParseError("label section truncated", bytes.size());
    const double label = std::bit_cast<double>(get_u64(bytes, at + 4));
    if (!std::isfinite(label)) throw ParseError("non-finite label", at + 4);
    seq.label = label;
    at += 12;
    if (at != bytes.size()) throw ParseError("trailing bytes after label", at);
  }
  return seq;
}

void write_features(const std::filesystem::path& path,
                    const FeatureSequence& seq) {
  const auto bytes = encode_features(seq);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

FeatureSequence load_features(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  auto seq = decode_features(bytes);
  seq.sample_id = path.stem().string();
  return seq;
}

FeatureSequence load_features_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  FeatureSequence seq;
  seq.sample_id = path.stem().string();
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(in, line)) throw ParseError("CSV feature file is empty", 0);
  seq.dim = split_csv(line).size();
  offset += line.size() + 1;
  while (std::getline(in, line)) {
    if (trim(line).empty()) {
      offset += line.size() + 1;
      continue;
    }
    const auto cells = split_csv(line);
    if (cells.size() != seq.dim) {
      throw ParseError("row has " + std::to_string(cells.size()) +
                           " columns, header declares " + std::to_string(seq.dim),
                       offset);
    }
    for (const auto& cell : cells) {
      double v = 0.0;
      try {
        v = parse_double(cell);
      } catch (const ParseError&) {
        throw ParseError("bad number '" + cell + "'", offset);
      }
      if (!std::isfinite(v)) throw ParseError("non-finite feature value", offset);
      seq.features.push_back(v);
    }
    ++seq.clips;
    offset += line.size() + 1;
  }
  if (seq.clips == 0) throw ParseError("CSV feature file has no rows", offset);
  return seq;
}

std::string split_name(Split split) {
  return split == Split::kTrain ? "train" : "test";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::kTrain;
  if (text == "test") return Split::kTest;
  throw DataError("unknown split '" + text + "'");
}

std::vector<const SampleEntry*> DatasetManifest::split(Split which) const {
  std::vector<const SampleEntry*> out;
  for (const auto& s : samples) {
    if (s.split == which) out.push_back(&s);
  }
  return out;
}

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& s : samples) {
    if (!ids.insert(s.id).second) {
      throw DataError("sample id '" + s.id + "' appears more than once");
    }
    if (!std::isfinite(s.label) || s.label < label_min || s.label > label_max) {
      throw DataError("label of '" + s.id + "' lies outside the declared range");
    }
  }
}

std::filesystem::path DatasetManifest::resolve(const SampleEntry& entry) const {
  return root / entry.path;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  std::string line;
  std::size_t offset = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    const std::size_t line_offset = offset;
    offset += line.size() + 1;
    const auto text = trim(line);
    if (text.empty()) continue;
    if (text.front() == '#') {
      const auto body = trim(text.substr(1));
      const auto eq = body.find('=');
      if (eq == std::string_view::npos) continue;
      const auto key = trim(body.substr(0, eq));
      const auto value = trim(body.substr(eq + 1));
      try {
        if (key == "dim") m.dim = static_cast<std::size_t>(parse_double(value));
        else if (key == "clips") m.clips = static_cast<std::size_t>(parse_double(value));
        else if (key == "label_min") m.label_min = parse_double(value);
        else if (key == "label_max") m.label_max = parse_double(value);
        else if (key == "label_offset") m.transform.offset = parse_double(value);
        else if (key == "label_scale") m.transform.scale = parse_double(value);
      } catch (const ParseError&) {
        throw ParseError("bad manifest value for '" + std::string(key) + "'",
                         line_offset);
      }
      continue;
    }
    const auto cells = split_csv(text);
    if (!header_seen) {
      if (cells != std::vector<std::string>{"id", "path", "label", "split"}) {
        throw ParseError("manifest header must be 'id,path,label,split'",
                         line_offset);
      }
      header_seen = true;
      continue;
    }
    if (cells.size() != 4) {
      throw ParseError("manifest row needs 4 fields", line_offset);
    }
    SampleEntry e;
    e.id = cells[0];
    e.path = cells[1];
    try {
      e.label = parse_double(cells[2]);
      e.split = parse_split(cells[3]);
    } catch (const DataError& err) {
      throw ParseError(std::string("bad manifest row: ") + err.what(), line_offset);
    }
    m.samples.push_back(std::move(e));
  }
  if (!header_seen) throw ParseError("manifest has no header row", offset);
  m.validate();
  return m;
}

void write_manifest(const std::filesystem::path& path,
                    const DatasetManifest& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << "# tqd manifest v1\n";
  out << "# dim=" << m.dim << "\n";
  out << "# clips=" << m.clips << "\n";
  out << "# label_min=" << format_double(m.label_min) << "\n";
  out << "# label_max=" << format_double(m.label_max) << "\n";
  out << "# label_offset=" << format_double(m.transform.offset) << "\n";
  out << "# label_scale=" << format_double(m.transform.scale) << "\n";
  out << "id,path,label,split\n";
  for (const auto& s : m.samples) {
    out << s.id << "," << s.path << "," << format_double(s.label) << ","
        << split_name(s.split) << "\n";
  }
}

DatasetManifest normalize_labels(const DatasetManifest& manifest) {
  const auto train = manifest.split(Split::kTrain);
  if (train.empty()) throw RangeError("cannot normalize: no train samples");
  double lo = train.front()->label, hi = lo;
  for (const auto* s : train) {
    lo = std::min(lo, s->label);
    hi = std::max(hi, s->label);
  }
  if (!(hi > lo)) throw RangeError("cannot normalize: train labels are constant");

  const LabelTransform step{lo, hi - lo};
  DatasetManifest out = manifest;
  for (auto& s : out.samples) s.label = step.apply(s.label);
  out.label_min = step.apply(manifest.label_min);
  out.label_max = step.apply(manifest.label_max);
  // Compose with any earlier transform so invert() reaches original units.
  out.transform.scale = manifest.transform.scale * (hi - lo);
  out.transform.offset = manifest.transform.offset + manifest.transform.scale * lo;
  return out;
}

void SynthOptions::validate() const {
  if (clips < 2) throw ConfigError("synthetic data needs at least 2 clips");
  if (dim < 8) throw ConfigError("synthetic data needs d >= 8");
  if (n_train < 2) throw ConfigError("synthetic data needs at least 2 train samples");
  if (!std::isfinite(noise_sigma) || noise_sigma < 0.0) {
    throw ConfigError("noise_sigma must be finite and nonnegative");
  }
}

SyntheticDataset generate_synthetic(const SynthOptions& options) {
  options.validate();
  const std::size_t L = options.clips, d = options.dim, z_dim = 2 + L;
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::gamma_distribution<double> gamma(1.0, 1.0);

  // Shared embedding map, d x (2 + L).
  std::vector<double> w_emb(d * z_dim);
  for (double& v : w_emb) v = unit(rng);

  SyntheticDataset out;
  auto& m = out.manifest;
  m.dim = d;
  m.clips = L;
  m.label_min = 0.0;
  m.label_max = 1.0;
  const std::size_t total = options.n_train + options.n_test;
  std::vector<double> z(z_dim);
  for (std::size_t n = 0; n < total; ++n) {
    FeatureSequence seq;
    char id[32];
    std::snprintf(id, sizeof id, "s%04zu", n);
    seq.sample_id = id;
    seq.clips = L;
    seq.dim = d;

    seq.planted_weights.resize(L);
    double wsum = 0.0;
    for (double& w : seq.planted_weights) {
      w = gamma(rng);
      wsum += w;
    }
    for (double& w : seq.planted_weights) w /= wsum;
    seq.clip_quality.resize(L);
    for (double& q : seq.clip_quality) q = uniform(rng);

    double label = 0.0;
    for (std::size_t k = 0; k < L; ++k) {
      label += seq.planted_weights[k] * seq.clip_quality[k];
    }
    seq.label = label;

    seq.features.resize(L * d);
    for (std::size_t k = 0; k < L; ++k) {
      std::fill(z.begin(), z.end(), 0.0);
      z[0] = seq.planted_weights[k];
      z[1] = seq.clip_quality[k];
      z[2 + k] = 1.0;
      for (std::size_t r = 0; r < d; ++r) {
        double f = 0.0;
        for (std::size_t c = 0; c < z_dim; ++c) f += w_emb[r * z_dim + c] * z[c];
        if (options.noise_sigma > 0.0) f += options.noise_sigma * unit(rng);
        seq.features[k * d + r] = static_cast<float>(f);
      }
    }

    SampleEntry entry;
    entry.id = seq.sample_id;
    entry.path = "features/" + seq.sample_id + ".tqdf";
    entry.label = label;
    entry.split = n < options.n_train ? Split::kTrain : Split::kTest;
    m.samples.push_back(entry);
    out.samples.push_back(std::move(seq));
  }
  return out;
}

std::filesystem::path truth_path_for(const DatasetManifest& manifest,
                                     const SampleEntry& entry) {
  return manifest.root / "truth" / (entry.id + ".truth.csv");
}

DatasetManifest write_synthetic(const SyntheticDataset& data,
                                const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir / "features");
  std::filesystem::create_directories(out_dir / "truth");
  DatasetManifest m = data.manifest;
  m.root = out_dir;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto& seq = data.samples[i];
    const auto& entry = m.samples[i];
    write_features(m.resolve(entry), seq);
    std::ofstream truth(truth_path_for(m, entry), std::ios::trunc);
    if (!truth) throw DataError("cannot write ground truth for " + entry.id);
    truth << "clip,weight,quality\n";
    for (std::size_t k = 0; k < seq.clips; ++k) {
      truth << k << "," << format_double(seq.planted_weights[k]) << ","
            << format_double(seq.clip_quality[k]) << "\n";
    }
  }
  write_manifest(out_dir / "manifest.txt", m);
  return m;
}

void load_truth(const std::filesystem::path& path, FeatureSequence& seq) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ground truth " + path.string());
  std::string line;
  std::getline(in, line);
  seq.planted_weights.clear();
  seq.clip_quality.clear();
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 3) throw ParseError("ground truth row needs 3 fields", 0);
    seq.planted_weights.push_back(parse_double(cells[1]));
    seq.clip_quality.push_back(parse_double(cells[2]));
  }
}

Dataset load_dataset(const DatasetManifest& manifest, bool with_truth) {
  Dataset ds;
  ds.manifest = manifest;
  for (const auto& entry : manifest.samples) {
    const auto file = manifest.resolve(entry);
    FeatureSequence seq = file.extension() == ".csv" ? load_features_csv(file)
                                                      : load_features(file);
    seq.sample_id = entry.id;
    if (seq.dim != manifest.dim || (manifest.clips && seq.clips != manifest.clips)) {
      throw DataError("sample '" + entry.id + "' is " +
                      std::to_string(seq.clips) + "x" + std::to_string(seq.dim) +
                      ", manifest declares " + std::to_string(manifest.clips) +
                      "x" + std::to_string(manifest.dim));
    }
    seq.label = entry.label;
    if (with_truth) load_truth(truth_path_for(manifest, entry), seq);
    (entry.split == Split::kTrain ? ds.train : ds.test).push_back(std::move(seq));
  }
  return ds;
}

Dataset to_dataset(const SyntheticDataset& data) {
  Dataset ds;
  ds.manifest = data.manifest;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    FeatureSequence seq = data.samples[i];
    seq.label = data.manifest.samples[i].label;
    (data.manifest.samples[i].split == Split::kTrain ? ds.train : ds.test)
        .push_back(std::move(seq));
  }
  return ds;
}

}  // namespace tqd
