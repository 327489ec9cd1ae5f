#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "stochattn/errors.hpp"
#include "stochattn/ops.hpp"
#include "stochattn/rng.hpp"

namespace stochattn {

enum class Split { train, valid, test, ood };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::valid:
      return "valid";
    case Split::test:
      return "test";
    case Split::ood:
      return "ood";
  }
  return "?";
}

/// Lowercase, then split on every maximal run of non-alphanumeric bytes.
/// Bytes >= 0x80 (UTF-8 continuation and lead bytes) count as separators.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto uc = static_cast<unsigned char>(ch);
    if (uc < 0x80 && std::isalnum(uc)) {
      current.push_back(static_cast<char>(std::tolower(uc)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

/// Token <-> id mapping with PAD = 0 and UNK = 1 reserved.
class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;

  Vocab() : tokens_{"<pad>", "<unk>"} {}

  /// Vocabulary holding exactly `tokens` (after the reserved entries), in order.
  static Vocab from_tokens(const std::vector<std::string>& tokens) {
    Vocab v;
    for (const auto& t : tokens) {
      if (v.index_.contains(t) || t == "<pad>" || t == "<unk>") throw DataError("duplicate vocabulary token '" + t + "'");
      v.index_.emplace(t, v.tokens_.size());
      v.tokens_.push_back(t);
    }
    return v;
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  bool contains(const std::string& token) const { return index_.contains(token); }

  std::size_t id(const std::string& token) const {
    const auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& token(std::size_t id) const {
    if (id >= tokens_.size()) throw ContractError("token id " + std::to_string(id) + " outside vocabulary");
    return tokens_[id];
  }

  /// Non-reserved tokens in id order.
  std::vector<std::string> entries() const { return {tokens_.begin() + 2, tokens_.end()}; }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary file " + path.string());
    for (std::size_t i = 2; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
  }

  static Vocab load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read vocabulary file " + path.string());
    std::vector<std::string> tokens;
    for (std::string line; std::getline(in, line);) {
      if (!line.empty()) tokens.push_back(line);
    }
    return from_tokens(tokens);
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Tokens seen at least `min_freq` times, ordered by descending frequency and
/// then lexicographically, capped at `max_size` entries.
inline Vocab build_vocab(const std::vector<std::string>& corpus, std::size_t min_freq = 2,
                         std::size_t max_size = 30000) {
  if (corpus.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& text : corpus)
    for (auto& tok : tokenize(text)) ++counts[tok];
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts)
    if (n >= min_freq) kept.emplace_back(tok, n);
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (kept.size() > max_size) kept.resize(max_size);
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [tok, n] : kept) tokens.push_back(tok);
  return Vocab::from_tokens(tokens);
}

struct Example {
  std::vector<std::size_t> tokens;
  std::size_t label = 0;
};

struct LabeledDataset {
  std::vector<Example> examples;
  std::shared_ptr<const Vocab> vocab;
  Split split = Split::train;
  std::size_t max_seq_len = 256;
  std::size_t num_classes = 2;
  /// Ground-truth P(class 1 | x) per example; only synthetic data has it.
  std::optional<std::vector<double>> class1_probability;

  std::size_t size() const noexcept { return examples.size(); }
  bool empty() const noexcept { return examples.empty(); }

  std::vector<std::size_t> labels() const {
    std::vector<std::size_t> out;
    out.reserve(examples.size());
    for (const auto& e : examples) out.push_back(e.label);
    return out;
  }

  void validate() const {
    if (!vocab) throw DataError("dataset has no vocabulary");
    for (std::size_t i = 0; i < examples.size(); ++i) {
      const auto& e = examples[i];
      if (e.label >= num_classes) throw DataError("example " + std::to_string(i) + " has label out of range");
      if (e.tokens.size() > max_seq_len) throw DataError("example " + std::to_string(i) + " exceeds max_seq_len");
      for (auto id : e.tokens)
        if (id >= vocab->size()) throw DataError("example " + std::to_string(i) + " has an id outside the vocabulary");
    }
  }

  /// Same vocabulary and metadata, chosen examples.
  LabeledDataset subset(std::span<const std::size_t> indices, Split tag) const {
    LabeledDataset out{{}, vocab, tag, max_seq_len, num_classes, std::nullopt};
    out.examples.reserve(indices.size());
    for (auto i : indices) out.examples.push_back(examples.at(i));
    if (class1_probability) {
      std::vector<double> truth;
      for (auto i : indices) truth.push_back(class1_probability->at(i));
      out.class1_probability = std::move(truth);
    }
    return out;
  }
};

/// Padded token grid fed to the model.
struct Batch {
  std::size_t size = 0;
  std::size_t length = 0;
  std::vector<std::size_t> tokens;  // [size, length], PAD-filled
  PaddingMask mask;
  std::vector<std::size_t> labels;
};

/// Batch of the chosen examples padded to the longest one. Empty sequences
/// are given a single UNK token so every row has at least one live position.
inline Batch make_batch(const LabeledDataset& data, std::span<const std::size_t> indices) {
  Batch batch;
  batch.size = indices.size();
  for (auto i : indices) batch.length = std::max(batch.length, std::max<std::size_t>(1, data.examples.at(i).tokens.size()));
  batch.tokens.assign(batch.size * batch.length, Vocab::kPad);
  batch.mask = PaddingMask{batch.size, batch.length, std::vector<std::uint8_t>(batch.size * batch.length, 1)};
  for (std::size_t r = 0; r < batch.size; ++r) {
    const auto& ex = data.examples[indices[r]];
    if (ex.tokens.empty()) {
      batch.tokens[r * batch.length] = Vocab::kUnk;
      batch.mask.padded[r * batch.length] = 0;
    }
    for (std::size_t t = 0; t < ex.tokens.size(); ++t) {
      batch.tokens[r * batch.length + t] = ex.tokens[t];
      batch.mask.padded[r * batch.length + t] = 0;
    }
    batch.labels.push_back(ex.label);
  }
  return batch;
}

struct TsvSchema {
  std::size_t label_column = 0;
  std::size_t text_column = 1;
};

struct RawExample {
  std::size_t label = 0;
  std::string text;
};

struct TsvContents {
  std::vector<RawExample> rows;
  std::size_t malformed = 0;
  std::vector<std::size_t> malformed_lines;  // 1-based
};

/// Parses `label<TAB>text` lines. Lines without the needed columns or with a
/// label that is not a non-negative integer are skipped and counted.
inline TsvContents read_tsv(const std::filesystem::path& path, const TsvSchema& schema = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read data file " + path.string());
  TsvContents out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> cols;
    std::string_view rest(line);
    for (;;) {
      const auto tab = rest.find('\t');
      cols.push_back(rest.substr(0, tab));
      if (tab == std::string_view::npos) break;
      rest.remove_prefix(tab + 1);
    }
    std::size_t label = 0;
    bool ok = cols.size() > std::max(schema.label_column, schema.text_column);
    if (ok) {
      const auto lab = cols[schema.label_column];
      const auto [ptr, ec] = std::from_chars(lab.data(), lab.data() + lab.size(), label);
      ok = ec == std::errc() && ptr == lab.data() + lab.size() && !lab.empty();
    }
    if (!ok) {
      ++out.malformed;
      out.malformed_lines.push_back(line_no);
      continue;
    }
    out.rows.push_back({label, std::string(cols[schema.text_column])});
  }
  return out;
}

/// Tokenizes, truncates to `max_seq_len` and maps through `vocab`.
inline LabeledDataset encode(const std::vector<RawExample>& rows, std::shared_ptr<const Vocab> vocab, Split tag,
                             std::size_t max_seq_len, std::size_t num_classes) {
  LabeledDataset out{{}, std::move(vocab), tag, max_seq_len, num_classes, std::nullopt};
  out.examples.reserve(rows.size());
  for (const auto& row : rows) {
    Example ex;
    ex.label = row.label;
    for (const auto& tok : tokenize(row.text)) {
      if (ex.tokens.size() == max_seq_len) break;
      ex.tokens.push_back(out.vocab->id(tok));
    }
    out.examples.push_back(std::move(ex));
  }
  out.validate();
  return out;
}

struct TsvLoadOptions {
  TsvSchema schema;
  std::size_t max_seq_len = 256;
  std::size_t min_freq = 2;
  std::size_t max_vocab = 30000;
  std::size_t num_classes = 0;  // 0: max label + 1, at least 2
  Split split = Split::train;
};

struct TsvLoad {
  LabeledDataset dataset;
  std::size_t malformed = 0;
};

/// Loads a TSV file. Without a vocabulary one is built from this file's text.
inline TsvLoad load_tsv(const std::filesystem::path& path, const TsvLoadOptions& options = {},
                        std::shared_ptr<const Vocab> vocab = nullptr) {
  auto contents = read_tsv(path, options.schema);
  if (contents.rows.empty()) throw DataError("no parseable lines in " + path.string());
  if (!vocab) {
    std::vector<std::string> corpus;
    for (const auto& r : contents.rows) corpus.push_back(r.text);
    vocab = std::make_shared<const Vocab>(build_vocab(corpus, options.min_freq, options.max_vocab));
  }
  std::size_t classes = options.num_classes;
  if (classes == 0) {
    std::size_t max_label = 1;
    for (const auto& r : contents.rows) max_label = std::max(max_label, r.label);
    classes = max_label + 1;
  }
  for (const auto& r : contents.rows)
    if (r.label >= classes) throw DataError("label " + std::to_string(r.label) + " in " + path.string() + " is out of range");
  return {encode(contents.rows, std::move(vocab), options.split, options.max_seq_len, classes), contents.malformed};
}

/// Writes `label<TAB>tokens` lines; UNK ids are written as "unk".
inline void write_tsv(const std::filesystem::path& path, const LabeledDataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write data file " + path.string());
  for (const auto& ex : data.examples) {
    out << ex.label << '\t';
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
      const auto id = ex.tokens[i];
      out << (i ? " " : "") << (id == Vocab::kUnk || id == Vocab::kPad ? std::string("unk") : data.vocab->token(id));
    }
    out << '\n';
  }
}

/// Seeded Fisher-Yates permutation of [0, n).
inline std::vector<std::size_t> shuffled_indices(std::size_t n, RngStream& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

struct SplitFractions {
  double train = 0.7;
  double valid = 0.1;
};

struct DatasetSplits {
  LabeledDataset train;
  LabeledDataset valid;
  LabeledDataset test;
};

/// Shuffles, then takes floor(train * n) and floor(valid * n) examples; the
/// remainder becomes the test split.
inline DatasetSplits split(const LabeledDataset& data, const SplitFractions& fractions, std::uint64_t seed) {
  if (data.empty()) throw DataError("cannot split an empty dataset");
  if (!(fractions.train > 0.0) || fractions.valid < 0.0 || fractions.train + fractions.valid > 1.0 + 1e-12) {
    throw ParameterError("split fractions must be positive and sum to at most 1");
  }
  RngStream rng = RngStream::for_component(seed, "split");
  const auto order = shuffled_indices(data.size(), rng);
  const double n = static_cast<double>(data.size());
  // The small offset keeps products like 0.57 * 100 from flooring to 56.
  const auto n_train = static_cast<std::size_t>(std::floor(fractions.train * n + 1e-9));
  const auto n_valid = std::min(data.size() - n_train, static_cast<std::size_t>(std::floor(fractions.valid * n + 1e-9)));
  const std::span<const std::size_t> all(order);
  return {data.subset(all.subspan(0, n_train), Split::train), data.subset(all.subspan(n_train, n_valid), Split::valid),
          data.subset(all.subspan(n_train + n_valid), Split::test)};
}

struct SyntheticConfig {
  std::size_t n_train = 2000;
  std::size_t n_eval = 500;
  std::size_t vocab_size = 1000;
  std::size_t seq_len = 32;
  std::uint64_t seed = 0;
  std::size_t cues_per_example = 5;  // odd, so the majority is never tied
  std::size_t cue_set_size = 0;      // 0: max(2, (vocab_size - 2) / 20)
  std::size_t max_minority_cues = 1;  // at most cues_per_example / 2
};

/// Binary cue-counting task with an in-domain / out-of-domain pair.
///
/// Every sequence holds `cues_per_example` polarity cues among filler tokens
/// and is labeled by the majority cue polarity. Between 0 and
/// `max_minority_cues` of the cues carry the opposite polarity. In-domain
/// splits draw cues from the sets id_positive / id_negative; the OOD split
/// uses the disjoint sets ood_positive / ood_negative, which are in the
/// vocabulary but never appear in in-domain data. Fillers are shared.
struct SyntheticBenchmark {
  LabeledDataset train;
  LabeledDataset valid;
  LabeledDataset test;
  LabeledDataset ood;
  std::vector<std::size_t> id_positive, id_negative, ood_positive, ood_negative;
};

inline SyntheticBenchmark synthetic_id_ood(const SyntheticConfig& cfg) {
  if (cfg.vocab_size < 40) throw ConfigError("synthetic vocab_size must be at least 40");
  if (cfg.seq_len == 0 || cfg.cues_per_example == 0 || cfg.cues_per_example % 2 == 0 ||
      cfg.cues_per_example > cfg.seq_len) {
    throw ConfigError("cues_per_example must be odd and no longer than seq_len");
  }
  if (cfg.n_train == 0 || cfg.n_eval == 0) throw ConfigError("synthetic split sizes must be positive");
  if (cfg.max_minority_cues > cfg.cues_per_example / 2) {
    throw ConfigError("max_minority_cues must not exceed cues_per_example / 2");
  }
  const std::size_t usable = cfg.vocab_size - 2;
  const std::size_t set_size = cfg.cue_set_size ? cfg.cue_set_size : std::max<std::size_t>(2, usable / 20);
  if (4 * set_size >= usable) {
    throw ConfigError("cue sets of size " + std::to_string(set_size) + " would overlap or exhaust a vocabulary of " +
                      std::to_string(cfg.vocab_size));
  }

  std::vector<std::string> tokens;
  SyntheticBenchmark out;
  const auto add_set = [&](const char* prefix, std::vector<std::size_t>& ids) {
    for (std::size_t i = 0; i < set_size; ++i) {
      ids.push_back(tokens.size() + 2);
      tokens.push_back(prefix + std::to_string(i));
    }
  };
  add_set("ipos", out.id_positive);
  add_set("ineg", out.id_negative);
  add_set("opos", out.ood_positive);
  add_set("oneg", out.ood_negative);
  std::vector<std::size_t> fillers;
  while (tokens.size() < usable) {
    fillers.push_back(tokens.size() + 2);
    tokens.push_back("w" + std::to_string(fillers.size() - 1));
  }
  auto vocab = std::make_shared<const Vocab>(Vocab::from_tokens(tokens));

  RngStream rng = RngStream::for_component(cfg.seed, "synthetic");
  const auto generate = [&](std::size_t n, Split tag, const std::vector<std::size_t>& pos,
                            const std::vector<std::size_t>& neg, RngStream stream) {
    LabeledDataset ds{{}, vocab, tag, cfg.seq_len, 2, std::vector<double>{}};
    const std::size_t k = cfg.cues_per_example;
    for (std::size_t e = 0; e < n; ++e) {
      Example ex;
      ex.label = static_cast<std::size_t>(stream.below(2));
      const std::size_t majority = k - static_cast<std::size_t>(stream.below(cfg.max_minority_cues + 1));
      ex.tokens.resize(cfg.seq_len);
      for (auto& t : ex.tokens) t = fillers[stream.below(fillers.size())];
      const auto positions = shuffled_indices(cfg.seq_len, stream);
      for (std::size_t c = 0; c < k; ++c) {
        const bool positive = (c < majority) == (ex.label == 1);
        const auto& set = positive ? pos : neg;
        ex.tokens[positions[c]] = set[stream.below(set.size())];
      }
      ds.class1_probability->push_back(static_cast<double>(ex.label));
      ds.examples.push_back(std::move(ex));
    }
    return ds;
  };
  out.train = generate(cfg.n_train, Split::train, out.id_positive, out.id_negative, rng.split(0));
  out.valid = generate(cfg.n_eval, Split::valid, out.id_positive, out.id_negative, rng.split(1));
  out.test = generate(cfg.n_eval, Split::test, out.id_positive, out.id_negative, rng.split(2));
  out.ood = generate(cfg.n_eval, Split::ood, out.ood_positive, out.ood_negative, rng.split(3));
  return out;
}

}  // namespace stochattn
