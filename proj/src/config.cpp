#include "tqd/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tqd/errors.hpp"
#include "tqd/format.hpp"

namespace tqd {
namespace {

struct Field {
  std::string key;
  std::function<std::string()> get;
  std::function<void(std::string_view)> set;
};

std::uint64_t parse_uint(std::string_view key, std::string_view text) {
  text = trim(text);
  std::uint64_t value = 0;
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, value);
  if (text.empty() || res.ec != std::errc() || res.ptr != end) {
    throw ConfigError("'" + std::string(key) + "' needs a nonnegative integer, got '" +
                      std::string(text) + "'");
  }
  return value;
}

double parse_real(std::string_view key, std::string_view text) {
  try {
    return parse_double(text);
  } catch (const ParseError&) {
    throw ConfigError("'" + std::string(key) + "' needs a number, got '" +
                      std::string(trim(text)) + "'");
  }
}

bool parse_bool(std::string_view key, std::string_view text) {
  text = trim(text);
  if (text == "true" || text == "on" || text == "1") return true;
  if (text == "false" || text == "off" || text == "0") return false;
  throw ConfigError("'" + std::string(key) + "' needs on/off, got '" +
                    std::string(text) + "'");
}

template <class T>
Field size_field(std::string key, T& ref) {
  return {key, [&ref] { return std::to_string(ref); },
          [&ref, key](std::string_view v) {
            ref = static_cast<T>(parse_uint(key, v));
          }};
}

Field real_field(std::string key, double& ref) {
  return {key, [&ref] { return format_double(ref); },
          [&ref, key](std::string_view v) { ref = parse_real(key, v); }};
}

Field bool_field(std::string key, bool& ref) {
  return {key, [&ref] { return std::string(ref ? "on" : "off"); },
          [&ref, key](std::string_view v) { ref = parse_bool(key, v); }};
}

template <class E>
Field enum_field(std::string key, E& ref,
                 std::vector<std::pair<std::string, E>> names) {
  return {key,
          [&ref, names] {
            for (const auto& [n, e] : names) {
              if (e == ref) return n;
            }
            return std::string("?");
          },
          [&ref, key, names](std::string_view v) {
            const auto text = trim(v);
            for (const auto& [n, e] : names) {
              if (n == text) {
                ref = e;
                return;
              }
            }
            std::string allowed;
            for (const auto& [n, e] : names) allowed += (allowed.empty() ? "" : "|") + n;
            throw ConfigError("'" + key + "' must be one of " + allowed +
                              ", got '" + std::string(text) + "'");
          }};
}

// The same table drives set/get/serialize, so the text format is lossless.
std::vector<Field> fields(TrainConfig& c) {
  return {
      size_field("model.dim", c.model.dim),
      size_field("model.queries", c.model.queries),
      size_field("model.heads", c.model.heads),
      size_field("model.layers", c.model.layers),
      real_field("model.dropout", c.model.dropout),
      size_field("model.ffn_dim", c.model.ffn_dim),
      real_field("model.query_variance", c.model.query_variance),
      bool_field("model.query_pe", c.model.query_pe),
      enum_field("model.pe_kind", c.model.pe_kind,
                 {{"sinusoidal", PeKind::kSinusoidal}, {"learned", PeKind::kLearned}}),
      bool_field("model.memory_pe", c.model.memory_pe),
      enum_field("model.trace_point", c.model.trace_point,
                 {{"sublayer", TracePoint::kSublayer}, {"normed", TracePoint::kNormed}}),
      size_field("model.head_hidden1", c.model.head_hidden1),
      size_field("model.head_hidden2", c.model.head_hidden2),
      bool_field("model.score_sigmoid", c.model.score_sigmoid),

      bool_field("loss.attention_loss", c.loss.attention_loss),
      real_field("loss.lambda_reg", c.loss.lambda_reg),
      real_field("loss.lambda_att", c.loss.lambda_att),
      enum_field("loss.kl_reduction", c.loss.kl_reduction,
                 {{"row_mean", KlReduction::kRowMean}, {"row_sum", KlReduction::kRowSum}}),
      bool_field("loss.kl_symmetric", c.loss.kl_symmetric),
      bool_field("loss.stop_grad_self", c.loss.stop_grad_self),
      bool_field("loss.stop_grad_cross", c.loss.stop_grad_cross),

      real_field("train.learning_rate", c.train.learning_rate),
      size_field("train.batch_size", c.train.batch_size),
      size_field("train.epochs", c.train.epochs),
      size_field("train.seed", c.train.seed),
      bool_field("train.normalize_labels", c.train.normalize_labels),
      size_field("train.threads", c.train.threads),

      {"data.manifest", [&c] { return c.manifest; },
       [&c](std::string_view v) { c.manifest = std::string(trim(v)); }},

      size_field("synth.n_train", c.synth.n_train),
      size_field("synth.n_test", c.synth.n_test),
      size_field("synth.clips", c.synth.clips),
      size_field("synth.dim", c.synth.dim),
      real_field("synth.noise_sigma", c.synth.noise_sigma),
      size_field("synth.seed", c.synth.seed),
  };
}

const Field& find_field(const std::vector<Field>& table, std::string_view key) {
  for (const auto& f : table) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

DecoderOptions ModelConfig::decoder_options() const {
  return {heads, dropout, query_pe, memory_pe, trace_point};
}

AttentionLossOptions LossConfig::attention_options() const {
  return {kl_reduction, kl_symmetric, stop_grad_self, stop_grad_cross};
}

void TrainConfig::set(std::string_view dotted_key, std::string_view value) {
  const auto table = fields(*this);
  find_field(table, trim(dotted_key)).set(value);
}

std::string TrainConfig::get(std::string_view dotted_key) const {
  auto& self = const_cast<TrainConfig&>(*this);
  const auto table = fields(self);
  return find_field(table, trim(dotted_key)).get();
}

std::vector<std::string> TrainConfig::keys() const {
  auto& self = const_cast<TrainConfig&>(*this);
  std::vector<std::string> out;
  for (const auto& f : fields(self)) out.push_back(f.key);
  return out;
}

void TrainConfig::validate() const {
  const auto& m = model;
  if (m.dim < 2 || m.dim % 2 != 0) throw ConfigError("model.dim must be even and >= 2");
  if (m.queries < 1) throw ConfigError("model.queries must be >= 1");
  if (m.heads < 1 || m.dim % m.heads != 0) {
    throw ConfigError("model.dim must be divisible by model.heads");
  }
  if (m.layers < 1) throw ConfigError("model.layers must be >= 1");
  if (!(m.dropout >= 0.0 && m.dropout < 1.0)) {
    throw ConfigError("model.dropout must lie in [0, 1)");
  }
  if (!(m.query_variance > 0.0) || !std::isfinite(m.query_variance)) {
    throw ConfigError("model.query_variance must be positive");
  }
  loss.weights().validate();
  if (!(train.learning_rate > 0.0) || !std::isfinite(train.learning_rate)) {
    throw ConfigError("train.learning_rate must be positive");
  }
  if (train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (train.epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (train.threads < 1) throw ConfigError("train.threads must be >= 1");
}

std::string TrainConfig::serialize() const {
  std::ostringstream out;
  std::string section;
  auto& self = const_cast<TrainConfig&>(*this);
  for (const auto& f : fields(self)) {
    const auto dot = f.key.find('.');
    const auto sec = f.key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out << "\n";
      out << "[" << sec << "]\n";
      section = sec;
    }
    out << f.key.substr(dot + 1) << " = " << f.get() << "\n";
  }
  return out.str();
}

TrainConfig TrainConfig::parse(std::string_view text) {
  TrainConfig config;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("line " + std::to_string(line_no) + ": bad section header");
      }
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = std::string(trim(line.substr(0, eq)));
    const auto full = section.empty() ? key : section + "." + key;
    try {
      config.set(full, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return config;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void TrainConfig::save(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write config file " + path);
  out << serialize();
}

void apply_overrides(TrainConfig& config,
                     const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("override '" + o + "' is not key=value");
    }
    config.set(std::string_view(o).substr(0, eq),
               std::string_view(o).substr(eq + 1));
  }
}

}  // namespace tqd
