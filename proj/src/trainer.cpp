#include "tqd/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "tqd/errors.hpp"
#include "tqd/format.hpp"
#include "tqd/ops.hpp"

namespace tqd {

void zero_grads(const NamedTensors& params) {
  for (auto [name, t] : params) t.zero_grad();
}

void adam_step(const NamedTensors& params, AdamState& state,
               double learning_rate) {
  if (state.m.empty()) {
    for (const auto& [name, t] : params) {
      state.m.emplace_back(t.size(), 0.0);
      state.v.emplace_back(t.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw ContractError("adam_step: state tracks " + std::to_string(state.m.size()) +
                        " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& [name, t] = params[p];
    if (state.m[p].size() != t.size()) {
      throw ContractError("adam_step: moment shape mismatch for " + name);
    }
    if (!t.has_grad()) continue;
    for (double g : t.grad()) {
      if (!std::isfinite(g)) {
        throw TrainingError("non-finite gradient in parameter '" + name + "'");
      }
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor param = params[p].second;
    if (!param.has_grad()) continue;
    const auto g = param.grad();
    auto w = param.mutable_data();
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

EvalResult evaluate(const Model& model, const ModelConfig& config,
                    const std::vector<FeatureSequence>& samples, double y_min,
                    double y_max) {
  if (samples.empty()) throw DataError("evaluate: no samples");
  EvalResult r;
  r.report.n_samples = samples.size();
  r.report.diagonality_per_layer.assign(config.layers, 0.0);
  r.per_layer_kl.assign(config.layers, 0.0);
  for (const auto& s : samples) {
    if (!s.label) throw DataError("evaluate: sample '" + s.sample_id + "' has no label");
    const ModelOutput out = forward(model, config, s.as_tensor(), false, 0);
    r.predictions.push_back(out.head.final_score.item());
    r.targets.push_back(*s.label);
    const auto att = attention_loss(out.decoder.trace);
    for (std::size_t n = 0; n < config.layers; ++n) {
      r.report.diagonality_per_layer[n] +=
          diagonality(gram_softmax(out.decoder.trace.self_out[n].detach()));
      r.per_layer_kl[n] += att.per_layer[n];
    }
  }
  const double count = static_cast<double>(samples.size());
  for (double& d : r.report.diagonality_per_layer) d /= count;
  for (double& k : r.per_layer_kl) k /= count;
  try {
    r.report.srcc = srcc(r.predictions, r.targets);
  } catch (const NumericError&) {
    r.report.srcc = 0.0;  // constant predictions carry no ranking
  }
  r.report.rl2_x100 = 100.0 * relative_l2(r.predictions, r.targets, y_min, y_max);
  return r;
}

std::string epoch_csv_header(std::size_t layers) {
  std::string h = "epoch,loss_reg,loss_att,srcc,rl2_x100";
  for (std::size_t i = 0; i < layers; ++i) h += ",diag_layer" + std::to_string(i + 1);
  return h;
}

std::string epoch_csv_row(const EpochLog& log) {
  std::string r = std::to_string(log.epoch) + "," + format_double(log.loss_reg) +
                  "," + format_double(log.loss_att) + "," + format_double(log.srcc) +
                  "," + format_double(log.rl2_x100);
  for (double d : log.diagonality) r += "," + format_double(d);
  return r;
}

TrainResult train(const TrainConfig& config, const Dataset& data,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  if (data.train.empty()) throw DataError("train: no training samples");
  const auto& mc = config.model;
  const auto& oc = config.train;

  std::vector<Tensor> memories;
  std::vector<double> labels;
  for (const auto& s : data.train) {
    if (!s.label) throw DataError("train: sample '" + s.sample_id + "' has no label");
    if (s.dim != mc.dim) {
      throw ConfigError("model.dim = " + std::to_string(mc.dim) +
                        " but features have d = " + std::to_string(s.dim));
    }
    memories.push_back(s.as_tensor());
    labels.push_back(*s.label);
  }
  const auto& validation = data.test.empty() ? data.train : data.test;

  TrainResult result;
  result.train_label_min = *std::min_element(labels.begin(), labels.end());
  result.train_label_max = *std::max_element(labels.begin(), labels.end());
  if (!(result.train_label_max > result.train_label_min)) {
    throw RangeError("train: training labels are constant");
  }
  result.model = Model::init(mc, oc.seed);
  result.best_model = result.model.clone();
  const NamedTensors params = result.model.parameters();

  std::mt19937_64 shuffle_rng(mix_seed(oc.seed, 2));
  std::vector<std::size_t> order(memories.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = std::min(oc.batch_size, memories.size());
  double best_srcc = -2.0;
  std::uint64_t sample_counter = 0;

  for (std::size_t epoch = 1; epoch <= oc.epochs; ++epoch) {
    Model last_good = result.model.clone();
    AdamState last_adam = result.adam;
    if (memories.size() > oc.batch_size) {
      std::shuffle(order.begin(), order.end(), shuffle_rng);
    }

    EpochLog log;
    log.epoch = epoch;
    std::string failure;
    try {
      for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t stop = std::min(start + batch, order.size());
        const double weight = 1.0 / static_cast<double>(stop - start);
        zero_grads(params);
        for (std::size_t b = start; b < stop; ++b) {
          const std::size_t i = order[b];
          const ModelOutput out = forward(result.model, mc, memories[i], true,
                                          mix_seed(oc.seed, 1000 + sample_counter++));
          SampleLoss loss = sample_loss(out, labels[i], config.loss, weight);
          if (!std::isfinite(loss.total.item())) {
            throw TrainingError("loss became non-finite");
          }
          loss.total.backward();
          log.loss_reg += loss.reg;
          log.loss_att += loss.att;
        }
        adam_step(params, result.adam, oc.learning_rate);
      }
    } catch (const NumericError& e) {
      failure = e.what();
    }
    if (failure.empty()) {
      for (const auto& [name, t] : params) {
        for (double v : t.data()) {
          if (!std::isfinite(v)) failure = "parameter '" + name + "' became non-finite";
        }
      }
    }
    if (!failure.empty()) {
      // Copy values back into the live tensors so `params` stays valid.
      const NamedTensors good = last_good.parameters();
      for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor live = params[p].second;
        const auto src = good[p].second.data();
        std::copy(src.begin(), src.end(), live.mutable_data().begin());
      }
      result.adam = std::move(last_adam);
      result.diverged = true;
      result.divergence_reason = failure;
      break;
    }

    const double n = static_cast<double>(memories.size());
    log.loss_reg /= n;
    log.loss_att /= n;
    const EvalResult eval = evaluate(result.model, mc, validation,
                                     result.train_label_min, result.train_label_max);
    log.srcc = eval.report.srcc;
    log.rl2_x100 = eval.report.rl2_x100;
    log.diagonality = eval.report.diagonality_per_layer;
    log.kl_per_layer = eval.per_layer_kl;
    if (log.srcc > best_srcc) {
      best_srcc = log.srcc;
      result.best_epoch = epoch;
      result.best_model = result.model.clone();
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCkptMagic[4] = {'T', 'Q', 'D', 'C'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  void need(std::size_t n, const char* what) {
    if (b_.size() - at_ < n) {
      throw ParseError(std::string("checkpoint truncated reading ") + what, b_.size());
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[at_ + i]) << (8 * i);
    at_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[at_ + i]) << (8 * i);
    at_ += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str(const char* what) {
    const auto n = u64(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + at_), n);
    at_ += n;
    return s;
  }
  std::size_t offset() const { return at_; }
  bool done() const { return at_ == b_.size(); }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t at_ = 0;
};

struct Array {
  Shape shape;
  std::vector<double> data;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kCkptMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(ckpt.config.serialize());
  std::ostringstream meta;
  meta << "label_offset=" << format_double(ckpt.label_transform.offset) << "\n"
       << "label_scale=" << format_double(ckpt.label_transform.scale) << "\n"
       << "train_label_min=" << format_double(ckpt.train_label_min) << "\n"
       << "train_label_max=" << format_double(ckpt.train_label_max) << "\n"
       << "epoch=" << ckpt.epoch << "\n";
  w.str(meta.str());
  w.u64(ckpt.adam.step);
  w.f64(ckpt.adam.beta1);
  w.f64(ckpt.adam.beta2);
  w.f64(ckpt.adam.eps);

  const NamedTensors params = ckpt.model.parameters();
  std::vector<std::pair<std::string, Array>> arrays;
  for (const auto& [name, t] : params) arrays.push_back({name, {t.shape(), t.to_vector()}});
  if (!ckpt.adam.m.empty()) {
    for (std::size_t p = 0; p < params.size(); ++p) {
      arrays.push_back({"adam.m." + params[p].first, {params[p].second.shape(), ckpt.adam.m[p]}});
      arrays.push_back({"adam.v." + params[p].first, {params[p].second.shape(), ckpt.adam.v[p]}});
    }
  }
  w.u32(static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, a] : arrays) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) w.u64(d);
    for (double v : a.data) w.f64(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCkptMagic, 4) != 0) {
    throw ParseError("not a checkpoint (bad magic)", 0);
  }
  Reader r(bytes.subspan(4));
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint version " + std::to_string(version) +
                    " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  ckpt.config = TrainConfig::parse(r.str("config"));
  std::map<std::string, std::string> meta;
  {
    std::istringstream in(r.str("metadata"));
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  auto meta_real = [&](const std::string& key) {
    if (!meta.count(key)) throw ParseError("checkpoint metadata lacks " + key, 0);
    return parse_double(meta[key]);
  };
  ckpt.label_transform = {meta_real("label_offset"), meta_real("label_scale")};
  ckpt.train_label_min = meta_real("train_label_min");
  ckpt.train_label_max = meta_real("train_label_max");
  ckpt.epoch = static_cast<std::size_t>(meta_real("epoch"));
  ckpt.adam.step = r.u64("adam step");
  ckpt.adam.beta1 = r.f64("adam beta1");
  ckpt.adam.beta2 = r.f64("adam beta2");
  ckpt.adam.eps = r.f64("adam eps");

  std::map<std::string, Array> arrays;
  const auto count = r.u32("array count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str("array name");
    Array a;
    const auto rank = r.u32("array rank");
    for (std::uint32_t d = 0; d < rank; ++d) a.shape.push_back(r.u64("array dims"));
    const std::size_t n = shape_numel(a.shape);
    r.need(8 * n, "array data");
    a.data.resize(n);
    for (double& v : a.data) v = r.f64("array data");
    arrays[name] = std::move(a);
  }
  if (!r.done()) throw ParseError("trailing bytes in checkpoint", 4 + r.offset());

  ckpt.model = Model::init(ckpt.config.model, 0);
  const NamedTensors params = ckpt.model.parameters();
  for (const auto& [name, t] : params) {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw DataError("checkpoint lacks parameter " + name);
    if (it->second.shape != t.shape()) {
      throw DataError("checkpoint parameter " + name + " has shape " +
                      shape_str(it->second.shape) + ", config implies " +
                      shape_str(t.shape()));
    }
    Tensor live = t;
    std::copy(it->second.data.begin(), it->second.data.end(),
              live.mutable_data().begin());
  }
  if (arrays.count("adam.m." + params.front().first)) {
    for (const auto& [name, t] : params) {
      const auto m = arrays.find("adam.m." + name);
      const auto v = arrays.find("adam.v." + name);
      if (m == arrays.end() || v == arrays.end()) {
        throw DataError("checkpoint lacks Adam moments for " + name);
      }
      ckpt.adam.m.push_back(m->second.data);
      ckpt.adam.v.push_back(v->second.data);
    }
  }
  return ckpt;
}

void checkpoint_save(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

Checkpoint checkpoint_load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

// ---------------------------------------------------------------------------
// Ablation

GridAxis parse_grid_axis(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("grid axis '" + text + "' is not key=v1,v2,...");
  }
  GridAxis axis{std::string(trim(text.substr(0, eq))), {}};
  std::string_view rest = std::string_view(text).substr(eq + 1);
  while (true) {
    const auto comma = rest.find(',');
    const auto value = trim(rest.substr(0, comma));
    if (value.empty()) throw ConfigError("grid axis '" + text + "' has an empty value");
    axis.values.emplace_back(value);
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return axis;
}

std::vector<AblationRow> run_ablation(const TrainConfig& base,
                                      const std::vector<GridAxis>& grid,
                                      const Dataset& data) {
  std::vector<std::vector<std::pair<std::string, std::string>>> cells{{}};
  for (const auto& axis : grid) {
    if (axis.values.empty()) throw ConfigError("grid axis '" + axis.key + "' has no values");
    base.get(axis.key);  // rejects unknown keys up front
    std::vector<std::vector<std::pair<std::string, std::string>>> next;
    for (const auto& cell : cells) {
      for (const auto& v : axis.values) {
        auto extended = cell;
        extended.emplace_back(axis.key, v);
        next.push_back(std::move(extended));
      }
    }
    cells = std::move(next);
  }

  std::vector<TrainConfig> configs;
  for (const auto& cell : cells) {
    TrainConfig c = base;
    for (const auto& [k, v] : cell) c.set(k, v);
    c.validate();
    configs.push_back(std::move(c));
  }

  std::vector<AblationRow> rows(cells.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(cells.size());
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        const TrainResult r = train(configs[i], data);
        AblationRow& row = rows[i];
        row.settings = cells[i];
        row.diverged = r.diverged;
        if (!r.log.empty()) {
          const auto to_report = [&](const EpochLog& log) {
            EvalReport rep;
            rep.srcc = log.srcc;
            rep.rl2_x100 = log.rl2_x100;
            rep.diagonality_per_layer = log.diagonality;
            rep.n_samples = data.test.empty() ? data.train.size() : data.test.size();
            return rep;
          };
          row.final_report = to_report(r.log.back());
          row.best_report = to_report(r.log[r.best_epoch - 1]);
        }
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(base.train.threads, cells.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  if (rows.empty()) return "";
  std::ostringstream out;
  for (const auto& [k, v] : rows.front().settings) out << k << ",";
  const std::size_t layers = rows.front().final_report.diagonality_per_layer.size();
  out << "srcc,rl2_x100";
  for (std::size_t i = 0; i < layers; ++i) out << ",diag_layer" << i + 1;
  out << ",best_srcc,diverged\n";
  for (const auto& row : rows) {
    for (const auto& [k, v] : row.settings) out << v << ",";
    out << format_double(row.final_report.srcc) << ","
        << format_double(row.final_report.rl2_x100);
    for (double d : row.final_report.diagonality_per_layer) out << "," << format_double(d);
    out << "," << format_double(row.best_report.srcc) << ","
        << (row.diverged ? 1 : 0) << "\n";
  }
  return out.str();
}

}  // namespace tqd
