#pragma once

// Experiment configuration files and the datasets they describe.
//
// Format: one `key = value` per line, `#` starts a comment, blank lines are
// ignored. Every key must be known; values given later (for example from
// command-line flags) override earlier ones.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stochattn/data.hpp"
#include "stochattn/errors.hpp"
#include "stochattn/model.hpp"
#include "stochattn/train.hpp"

namespace stochattn {

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> methods{"trans", "sto", "h-sto", "mc-dropout", "ensemble"};
  return methods;
}

struct DataSource {
  enum class Kind { synthetic, tsv };
  Kind kind = Kind::synthetic;
  SyntheticConfig synthetic;
  std::string train_path, valid_path, test_path, ood_path;
  double valid_fraction = 0.1;  // carved from train_path when valid_path is empty
  double test_fraction = 0.2;   // carved from train_path when test_path is empty
  std::size_t min_freq = 2;
  std::size_t max_vocab = 30000;
  TsvSchema schema;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;
  DataSource data;
  std::size_t runs = 10;
  std::size_t ensemble_size = 10;
  double mc_dropout_rate = 0.1;
  std::vector<std::string> methods{"trans", "sto", "h-sto"};
  std::string out = "out";

  void apply(const std::string& key, const std::string& value) {
    using detail::parse_double;
    using detail::parse_unsigned;
    if (key == "seed") seed = parse_unsigned(key, value);
    else if (key == "vocab_size") throw ConfigError("vocab_size is derived from the data and cannot be set");
    else if (model.apply(key, value)) {
    } else if (train.apply(key, value)) {
    } else if (key == "data") {
      if (value == "synthetic") data.kind = DataSource::Kind::synthetic;
      else if (value == "tsv") data.kind = DataSource::Kind::tsv;
      else throw ConfigError("data must be 'synthetic' or 'tsv', got '" + value + "'");
    } else if (key == "synthetic_n_train") data.synthetic.n_train = parse_unsigned(key, value);
    else if (key == "synthetic_n_eval") data.synthetic.n_eval = parse_unsigned(key, value);
    else if (key == "synthetic_vocab_size") data.synthetic.vocab_size = parse_unsigned(key, value);
    else if (key == "synthetic_seq_len") data.synthetic.seq_len = parse_unsigned(key, value);
    else if (key == "synthetic_cues") data.synthetic.cues_per_example = parse_unsigned(key, value);
    else if (key == "synthetic_cue_set_size") data.synthetic.cue_set_size = parse_unsigned(key, value);
    else if (key == "synthetic_max_minority") data.synthetic.max_minority_cues = parse_unsigned(key, value);
    else if (key == "train_path") data.train_path = value;
    else if (key == "valid_path") data.valid_path = value;
    else if (key == "test_path") data.test_path = value;
    else if (key == "ood_path") data.ood_path = value;
    else if (key == "valid_fraction") data.valid_fraction = parse_double(key, value);
    else if (key == "test_fraction") data.test_fraction = parse_double(key, value);
    else if (key == "min_freq") data.min_freq = parse_unsigned(key, value);
    else if (key == "max_vocab") data.max_vocab = parse_unsigned(key, value);
    else if (key == "label_column") data.schema.label_column = parse_unsigned(key, value);
    else if (key == "text_column") data.schema.text_column = parse_unsigned(key, value);
    else if (key == "runs") runs = parse_unsigned(key, value);
    else if (key == "ensemble_size") ensemble_size = parse_unsigned(key, value);
    else if (key == "mc_dropout_rate") mc_dropout_rate = parse_double(key, value);
    else if (key == "methods") methods = parse_methods(value);
    else if (key == "out") out = value;
    else throw ConfigError("unknown config key '" + key + "'");
  }

  /// Checks everything that does not depend on the data.
  void validate() const {
    train.validate();
    ModelConfig probe = model;
    probe.vocab_size = std::max<std::size_t>(probe.vocab_size, 3);
    probe.validate();
    std::vector<std::string> bad;
    if (runs == 0) bad.push_back("runs must be >= 1");
    if (ensemble_size < 2) bad.push_back("ensemble_size must be >= 2");
    if (!(mc_dropout_rate >= 0.0 && mc_dropout_rate < 1.0)) bad.push_back("mc_dropout_rate must lie in [0, 1)");
    if (methods.empty()) bad.push_back("methods must list at least one method");
    if (data.kind == DataSource::Kind::tsv) {
      if (data.train_path.empty()) bad.push_back("data = tsv needs train_path");
      if (data.schema.label_column == data.schema.text_column) bad.push_back("label_column and text_column coincide");
      const double carved = (data.valid_path.empty() ? data.valid_fraction : 0.0) +
                            (data.test_path.empty() ? data.test_fraction : 0.0);
      if (data.valid_path.empty() && !(data.valid_fraction > 0.0)) bad.push_back("valid_fraction must be positive");
      if (data.test_path.empty() && !(data.test_fraction > 0.0)) bad.push_back("test_fraction must be positive");
      if (!(carved < 1.0)) bad.push_back("valid_fraction + test_fraction must be below 1");
    } else if (data.synthetic.seq_len > model.max_seq_len) {
      bad.push_back("synthetic_seq_len exceeds max_seq_len");
    }
    if (bad.empty()) return;
    std::string msg = "invalid run config:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw ConfigError(msg);
  }

  static std::vector<std::string> parse_methods(const std::string& value) {
    std::vector<std::string> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto b = item.find_first_not_of(" \t");
      if (b == std::string::npos) continue;
      item = item.substr(b, item.find_last_not_of(" \t") - b + 1);
      if (std::find(known_methods().begin(), known_methods().end(), item) == known_methods().end()) {
        throw ConfigError("unknown method '" + item + "' (expected trans, sto, h-sto, mc-dropout or ensemble)");
      }
      if (std::find(out.begin(), out.end(), item) != out.end()) throw ConfigError("method '" + item + "' listed twice");
      out.push_back(item);
    }
    return out;
  }
};

/// Parses config text into (key, value) pairs in file order.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text,
                                                                          const std::string& origin = "config") {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected 'key = value', got '" + line + "'");
    }
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(number) + ": missing key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

inline void apply_config_text(RunConfig& config, const std::string& text, const std::string& origin = "config") {
  for (const auto& [key, value] : parse_config_text(text, origin)) {
    try {
      config.apply(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ": " + e.what());
    }
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  RunConfig config;
  apply_config_text(config, text.str(), path.string());
  return config;
}

/// Every split the config describes, sharing one vocabulary.
struct PreparedData {
  std::shared_ptr<const Vocab> vocab;
  LabeledDataset train, valid, test;
  std::optional<LabeledDataset> ood;
  std::size_t malformed = 0;
};

namespace detail {

inline LabeledDataset load_split(const std::string& path, const RunConfig& config, Split tag,
                                 const std::shared_ptr<const Vocab>& vocab, std::size_t& malformed) {
  TsvLoadOptions options{config.data.schema, config.model.max_seq_len, config.data.min_freq, config.data.max_vocab,
                         config.model.num_classes, tag};
  auto loaded = load_tsv(path, options, vocab);
  malformed += loaded.malformed;
  return std::move(loaded.dataset);
}

}  // namespace detail

/// Builds (or, with `vocab`, reuses) the vocabulary and loads or generates
/// the splits. Synthetic data is seeded by `config.seed`.
inline PreparedData prepare_data(const RunConfig& config, std::shared_ptr<const Vocab> vocab = nullptr) {
  PreparedData out;
  if (config.data.kind == DataSource::Kind::synthetic) {
    SyntheticConfig sc = config.data.synthetic;
    sc.seed = config.seed;
    auto bench = synthetic_id_ood(sc);
    if (vocab && vocab->entries() != bench.train.vocab->entries()) {
      throw DataError("the supplied vocabulary does not match the synthetic task");
    }
    out.vocab = bench.train.vocab;
    out.train = std::move(bench.train);
    out.valid = std::move(bench.valid);
    out.test = std::move(bench.test);
    out.ood = std::move(bench.ood);
    return out;
  }

  const auto& d = config.data;
  LabeledDataset pool;
  if (vocab) {
    pool = detail::load_split(d.train_path, config, Split::train, vocab, out.malformed);
  } else {
    TsvLoadOptions options{d.schema, config.model.max_seq_len, d.min_freq, d.max_vocab, config.model.num_classes,
                           Split::train};
    auto loaded = load_tsv(d.train_path, options);
    out.malformed += loaded.malformed;
    pool = std::move(loaded.dataset);
    vocab = pool.vocab;
  }
  out.vocab = vocab;
  const double valid_share = d.valid_path.empty() ? d.valid_fraction : 0.0;
  const double test_share = d.test_path.empty() ? d.test_fraction : 0.0;
  auto parts = split(pool, SplitFractions{1.0 - valid_share - test_share, valid_share}, config.seed);
  out.train = std::move(parts.train);
  out.valid = std::move(parts.valid);
  if (d.test_path.empty()) {
    out.test = std::move(parts.test);
  } else {
    // Flooring can leave a few examples over when nothing is carved for test.
    out.train.examples.insert(out.train.examples.end(), parts.test.examples.begin(), parts.test.examples.end());
    out.test = detail::load_split(d.test_path, config, Split::test, vocab, out.malformed);
  }
  if (!d.valid_path.empty()) out.valid = detail::load_split(d.valid_path, config, Split::valid, vocab, out.malformed);
  if (!d.ood_path.empty()) out.ood = detail::load_split(d.ood_path, config, Split::ood, vocab, out.malformed);
  if (out.train.empty() || out.valid.empty() || out.test.empty()) {
    throw DataError("train, valid and test splits must all be non-empty");
  }
  return out;
}

/// Model config with the data-dependent fields filled in.
inline ModelConfig model_config_for(const RunConfig& config, const PreparedData& data) {
  ModelConfig m = config.model;
  m.vocab_size = data.vocab->size();
  m.seed = config.seed;
  return m;
}

inline TrainConfig train_config_for(const RunConfig& config) {
  TrainConfig t = config.train;
  t.seed = config.seed;
  return t;
}

/// The effective configuration as config-file text.
inline std::string to_config_text(const RunConfig& c) {
  std::ostringstream os;
  const auto kv = [&](const std::string& k, const std::string& v) { os << k << " = " << v << '\n'; };
  using detail::format_double;
  kv("seed", std::to_string(c.seed));
  for (const auto& [k, v] : c.model.to_key_values())
    if (k != "vocab_size" && k != "seed") kv(k, v);
  kv("lr", format_double(c.train.lr));
  kv("batch_size", std::to_string(c.train.batch_size));
  kv("max_epochs", std::to_string(c.train.max_epochs));
  kv("eval_every", std::to_string(c.train.eval_every));
  kv("metric", to_string(c.train.metric));
  kv("grad_clip", format_double(c.train.grad_clip));
  kv("beta1", format_double(c.train.beta1));
  kv("beta2", format_double(c.train.beta2));
  kv("adam_eps", format_double(c.train.eps));
  if (c.data.kind == DataSource::Kind::synthetic) {
    const auto& s = c.data.synthetic;
    kv("data", "synthetic");
    kv("synthetic_n_train", std::to_string(s.n_train));
    kv("synthetic_n_eval", std::to_string(s.n_eval));
    kv("synthetic_vocab_size", std::to_string(s.vocab_size));
    kv("synthetic_seq_len", std::to_string(s.seq_len));
    kv("synthetic_cues", std::to_string(s.cues_per_example));
    kv("synthetic_cue_set_size", std::to_string(s.cue_set_size));
    kv("synthetic_max_minority", std::to_string(s.max_minority_cues));
  } else {
    kv("data", "tsv");
    for (const auto& [k, v] : {std::pair{"train_path", c.data.train_path}, {"valid_path", c.data.valid_path},
                               {"test_path", c.data.test_path}, {"ood_path", c.data.ood_path}})
      if (!v.empty()) kv(k, v);
    kv("valid_fraction", format_double(c.data.valid_fraction));
    kv("test_fraction", format_double(c.data.test_fraction));
    kv("min_freq", std::to_string(c.data.min_freq));
    kv("max_vocab", std::to_string(c.data.max_vocab));
    kv("label_column", std::to_string(c.data.schema.label_column));
    kv("text_column", std::to_string(c.data.schema.text_column));
  }
  kv("runs", std::to_string(c.runs));
  kv("ensemble_size", std::to_string(c.ensemble_size));
  kv("mc_dropout_rate", format_double(c.mc_dropout_rate));
  std::string methods;
  for (const auto& m : c.methods) methods += (methods.empty() ? "" : ", ") + m;
  kv("methods", methods);
  return os.str();
}

}  // namespace stochattn
