#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stochattn/attention.hpp"
#include "stochattn/data.hpp"
#include "stochattn/errors.hpp"
#include "stochattn/ops.hpp"
#include "stochattn/rng.hpp"
#include "stochattn/sampling.hpp"
#include "stochattn/tensor.hpp"

namespace stochattn {

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ConfigError("'" + key + "' expects a number, got '" + text + "'");
  }
  return v;
}

inline std::uint64_t parse_unsigned(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + text + "'");
  }
  return v;
}

}  // namespace detail

struct ModelConfig {
  std::size_t num_layers = 1;
  std::size_t num_heads = 8;
  std::size_t emb_dim = 128;
  std::size_t ffn_hidden_dim = 128;
  std::size_t vocab_size = 0;
  std::size_t max_seq_len = 256;
  std::size_t num_classes = 2;
  double dropout_rate = 0.1;
  StochasticConfig attention;
  double alpha = 0.0;  // 0 selects sqrt(emb_dim / num_heads)
  std::size_t centroid_count = 16;
  std::uint64_t seed = 0;

  double attention_scale() const {
    return alpha > 0.0 ? alpha : AttentionParams::default_alpha(emb_dim, num_heads);
  }

  /// Throws ConfigError naming every offending field.
  void validate() const {
    std::vector<std::string> bad;
    if (num_layers == 0) bad.push_back("num_layers must be >= 1");
    if (num_heads == 0) bad.push_back("num_heads must be >= 1");
    if (emb_dim == 0 || (num_heads != 0 && emb_dim % num_heads != 0)) {
      bad.push_back("emb_dim must be a positive multiple of num_heads");
    }
    if (ffn_hidden_dim == 0) bad.push_back("ffn_hidden_dim must be >= 1");
    if (vocab_size < 3) bad.push_back("vocab_size must be >= 3");
    if (max_seq_len == 0) bad.push_back("max_seq_len must be >= 1");
    if (num_classes < 2) bad.push_back("num_classes must be >= 2");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) bad.push_back("dropout_rate must lie in [0, 1)");
    for (auto [name, t] : {std::pair{"tau", attention.tau}, {"tau1", attention.tau1}, {"tau2", attention.tau2}}) {
      if (!(t > 0.0) || !std::isfinite(t)) bad.push_back(std::string(name) + " must be positive");
    }
    if (alpha < 0.0 || !std::isfinite(alpha)) bad.push_back("alpha must be positive (or 0 for the default)");
    if (attention.mode == AttentionMode::hierarchical && centroid_count == 0) bad.push_back("centroid_count must be >= 1");
    if (bad.empty()) return;
    std::string msg = "invalid model config:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw ConfigError(msg);
  }

  std::vector<std::pair<std::string, std::string>> to_key_values() const {
    using detail::format_double;
    return {{"num_layers", std::to_string(num_layers)},
            {"num_heads", std::to_string(num_heads)},
            {"emb_dim", std::to_string(emb_dim)},
            {"ffn_hidden_dim", std::to_string(ffn_hidden_dim)},
            {"vocab_size", std::to_string(vocab_size)},
            {"max_seq_len", std::to_string(max_seq_len)},
            {"num_classes", std::to_string(num_classes)},
            {"dropout_rate", format_double(dropout_rate)},
            {"mode", to_string(attention.mode)},
            {"tau", format_double(attention.tau)},
            {"tau1", format_double(attention.tau1)},
            {"tau2", format_double(attention.tau2)},
            {"alpha", format_double(alpha)},
            {"centroid_count", std::to_string(centroid_count)},
            {"seed", std::to_string(seed)}};
  }

  /// Applies one key to the config. Returns false when the key is not a model key.
  bool apply(const std::string& key, const std::string& value) {
    using detail::parse_double;
    using detail::parse_unsigned;
    if (key == "num_layers") num_layers = parse_unsigned(key, value);
    else if (key == "num_heads") num_heads = parse_unsigned(key, value);
    else if (key == "emb_dim") emb_dim = parse_unsigned(key, value);
    else if (key == "ffn_hidden_dim") ffn_hidden_dim = parse_unsigned(key, value);
    else if (key == "vocab_size") vocab_size = parse_unsigned(key, value);
    else if (key == "max_seq_len") max_seq_len = parse_unsigned(key, value);
    else if (key == "num_classes") num_classes = parse_unsigned(key, value);
    else if (key == "dropout_rate") dropout_rate = parse_double(key, value);
    else if (key == "mode") attention.mode = parse_attention_mode(value);
    else if (key == "tau") attention.tau = parse_double(key, value);
    else if (key == "tau1") attention.tau1 = parse_double(key, value);
    else if (key == "tau2") attention.tau2 = parse_double(key, value);
    else if (key == "alpha") alpha = parse_double(key, value);
    else if (key == "centroid_count") centroid_count = parse_unsigned(key, value);
    else if (key == "seed") seed = parse_unsigned(key, value);
    else return false;
    return true;
  }

  bool operator==(const ModelConfig& other) const { return to_key_values() == other.to_key_values(); }
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

struct ForwardOptions {
  bool dropout_active = false;
  std::optional<double> dropout_rate;  // overrides ModelConfig::dropout_rate when set
  bool stochastic = true;              // draw Gumbel noise; no effect in deterministic mode
  NoiseSource* noise = nullptr;        // replaces the noise derived from the rng
  AttentionTrace* trace = nullptr;
};

/// Pre-layer-norm transformer encoder with mean pooling and a linear head.
///
///   x = tok_emb[ids] + pos_emb[0:l]
///   per layer: x += attn(LN1(x)); x += W2 relu(W1 LN2(x) + b1) + b2
///   logits = mean_{unpadded t}(LNf(x)_t) W_c + b_c
///
/// Dropout sits after the embedding sum and on both residual branches.
class TransformerClassifier {
 public:
  struct Layer {
    Tensor ln1_gamma, ln1_beta;
    AttentionParams attention;
    std::optional<CentroidSet> centroids;
    Tensor ln2_gamma, ln2_beta;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  };

  /// Weights ~ N(0, 0.02), centroids ~ N(0, 1/d_h), biases 0, norm gains 1.
  static TransformerClassifier init(const ModelConfig& config, RngStream& rng) {
    config.validate();
    TransformerClassifier m;
    m.config_ = config;
    const auto d = config.emb_dim;
    const auto dh = d / config.num_heads;
    const auto normal = [&](Shape shape, double stddev) {
      std::vector<double> v(shape_numel(shape));
      for (double& e : v) e = stddev * rng.normal();
      return Tensor(std::move(shape), std::move(v), true);
    };
    const auto zeros = [](Shape shape) { return Tensor::zeros(std::move(shape), true); };
    const auto ones = [](std::size_t n) { return Tensor({n}, std::vector<double>(n, 1.0), true); };

    m.token_embedding_ = normal({config.vocab_size, d}, 0.02);
    m.position_embedding_ = normal({config.max_seq_len, d}, 0.02);
    for (std::size_t i = 0; i < config.num_layers; ++i) {
      Layer layer;
      layer.ln1_gamma = ones(d);
      layer.ln1_beta = zeros({d});
      layer.attention.w_q = normal({d, d}, 0.02);
      layer.attention.w_k = normal({d, d}, 0.02);
      layer.attention.w_v = normal({d, d}, 0.02);
      layer.attention.heads = config.num_heads;
      layer.attention.alpha = config.attention_scale();
      if (config.attention.mode == AttentionMode::hierarchical) {
        layer.centroids = CentroidSet{normal({dh, config.centroid_count}, 1.0 / std::sqrt(static_cast<double>(dh)))};
      }
      layer.ln2_gamma = ones(d);
      layer.ln2_beta = zeros({d});
      layer.ffn_w1 = normal({d, config.ffn_hidden_dim}, 0.02);
      layer.ffn_b1 = zeros({config.ffn_hidden_dim});
      layer.ffn_w2 = normal({config.ffn_hidden_dim, d}, 0.02);
      layer.ffn_b2 = zeros({d});
      m.layers_.push_back(std::move(layer));
    }
    m.final_gamma_ = ones(d);
    m.final_beta_ = zeros({d});
    m.classifier_w_ = normal({d, config.num_classes}, 0.02);
    m.classifier_b_ = zeros({config.num_classes});
    return m;
  }

  const ModelConfig& config() const noexcept { return config_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  /// Every trainable tensor with a stable dotted name. The handles alias the
  /// model's storage.
  std::vector<NamedParameter> parameters() const {
    std::vector<NamedParameter> out{{"token_embedding", token_embedding_}, {"position_embedding", position_embedding_}};
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      const std::string p = "layers." + std::to_string(i) + ".";
      out.push_back({p + "ln1.gamma", l.ln1_gamma});
      out.push_back({p + "ln1.beta", l.ln1_beta});
      out.push_back({p + "attn.w_q", l.attention.w_q});
      out.push_back({p + "attn.w_k", l.attention.w_k});
      out.push_back({p + "attn.w_v", l.attention.w_v});
      if (l.centroids) out.push_back({p + "attn.centroids", l.centroids->centroids});
      out.push_back({p + "ln2.gamma", l.ln2_gamma});
      out.push_back({p + "ln2.beta", l.ln2_beta});
      out.push_back({p + "ffn.w1", l.ffn_w1});
      out.push_back({p + "ffn.b1", l.ffn_b1});
      out.push_back({p + "ffn.w2", l.ffn_w2});
      out.push_back({p + "ffn.b2", l.ffn_b2});
    }
    out.push_back({"final_ln.gamma", final_gamma_});
    out.push_back({"final_ln.beta", final_beta_});
    out.push_back({"classifier.weight", classifier_w_});
    out.push_back({"classifier.bias", classifier_b_});
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
  }

  /// Deep copy with independent storage.
  TransformerClassifier clone() const {
    TransformerClassifier copy = *this;
    copy.for_each_tensor([](Tensor& t) { t = t.clone(); });
    return copy;
  }

  /// Copies parameter values from `other`, which must share this model's config.
  void assign_from(const TransformerClassifier& other) {
    if (!(other.config_ == config_)) throw ContractError("assign_from: model configs differ");
    auto mine = parameters();
    const auto theirs = other.parameters();
    for (std::size_t i = 0; i < mine.size(); ++i) {
      std::copy(theirs[i].tensor.data().begin(), theirs[i].tensor.data().end(), mine[i].tensor.mutable_data().begin());
    }
  }

  /// Logits [batch.size, num_classes].
  Tensor forward(const Batch& batch, const ForwardOptions& options, RngStream& rng) const {
    if (batch.length > config_.max_seq_len) {
      throw ContractError("batch length " + std::to_string(batch.length) + " exceeds max_seq_len " +
                          std::to_string(config_.max_seq_len));
    }
    const double rate = options.dropout_rate.value_or(config_.dropout_rate);
    const RngStream call = rng.split(rng.next_u64());
    std::uint64_t site = 0;
    const auto drop = [&](const Tensor& t) {
      RngStream stream = call.split(++site);
      return dropout(t, rate, options.dropout_active, stream);
    };
    NoiseSource own_noise = options.stochastic ? NoiseSource::live(call.split(0)) : NoiseSource::zero();
    NoiseSource& noise = options.noise ? *options.noise : own_noise;

    std::vector<std::size_t> positions(batch.length);
    for (std::size_t t = 0; t < batch.length; ++t) positions[t] = t;
    const Tensor pos = reshape(embedding(position_embedding_, positions, 1, batch.length),
                               {batch.length, config_.emb_dim});
    Tensor x = drop(add(embedding(token_embedding_, batch.tokens, batch.size, batch.length), pos));

    for (const auto& layer : layers_) {
      const Tensor attended =
          self_attention(layer_norm(x, layer.ln1_gamma, layer.ln1_beta), layer.attention, config_.attention,
                         layer.centroids ? &*layer.centroids : nullptr, noise, &batch.mask, options.trace);
      x = add(x, drop(attended));
      const Tensor hidden = relu(add(matmul(layer_norm(x, layer.ln2_gamma, layer.ln2_beta), layer.ffn_w1), layer.ffn_b1));
      x = add(x, drop(add(matmul(hidden, layer.ffn_w2), layer.ffn_b2)));
    }
    const Tensor pooled = masked_mean(layer_norm(x, final_gamma_, final_beta_), batch.mask);
    return add(matmul(pooled, classifier_w_), classifier_b_);
  }

 private:
  template <typename F>
  void for_each_tensor(F&& f) {
    f(token_embedding_);
    f(position_embedding_);
    for (auto& l : layers_) {
      for (Tensor* t : {&l.ln1_gamma, &l.ln1_beta, &l.attention.w_q, &l.attention.w_k, &l.attention.w_v, &l.ln2_gamma,
                        &l.ln2_beta, &l.ffn_w1, &l.ffn_b1, &l.ffn_w2, &l.ffn_b2})
        f(*t);
      if (l.centroids) f(l.centroids->centroids);
    }
    f(final_gamma_);
    f(final_beta_);
    f(classifier_w_);
    f(classifier_b_);
  }

  ModelConfig config_;
  Tensor token_embedding_, position_embedding_;
  std::vector<Layer> layers_;
  Tensor final_gamma_, final_beta_;
  Tensor classifier_w_, classifier_b_;
};

/// Class probabilities softmax(logits) row by row.
inline Tensor class_probabilities(const Tensor& logits) { return softmax(logits, logits.rank() - 1, 1.0); }

/// Row-major [data.size(), num_classes] probabilities, evaluated in batches
/// without recording gradients.
inline std::vector<double> predict_probabilities(const TransformerClassifier& model, const LabeledDataset& data,
                                                 const ForwardOptions& options, RngStream& rng,
                                                 std::size_t batch_size = 256) {
  const std::size_t classes = model.config().num_classes;
  std::vector<double> out;
  out.reserve(data.size() * classes);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    const Tensor probs = class_probabilities(model.forward(make_batch(data, idx), options, rng));
    out.insert(out.end(), probs.data().begin(), probs.data().end());
  }
  return out;
}

/// Argmax of each row of a row-major [n, classes] matrix.
inline std::vector<std::size_t> argmax_rows(std::span<const double> probs, std::size_t classes) {
  std::vector<std::size_t> out(probs.size() / classes);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto row = probs.subspan(i * classes, classes);
    out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace stochattn
