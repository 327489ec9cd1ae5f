#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "stochattn/data.hpp"
#include "stochattn/errors.hpp"
#include "stochattn/metrics.hpp"
#include "stochattn/model.hpp"
#include "stochattn/ops.hpp"
#include "stochattn/rng.hpp"
#include "stochattn/tensor.hpp"

namespace stochattn {

/// Mean negative log-likelihood of `labels` under softmax(logits), via log-sum-exp.
inline Tensor nll_loss(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("nll_loss: logits " + shape_string(logits.shape()) + " do not match " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  const auto z = logits.data();
  std::vector<double> probs(batch * classes);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] >= classes) {
      throw ContractError("label " + std::to_string(labels[b]) + " out of range for " + std::to_string(classes) +
                          " classes");
    }
    const auto row = z.subspan(b * classes, classes);
    const double peak = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - peak);
    const double log_norm = peak + std::log(sum);
    total += log_norm - row[labels[b]];
    for (std::size_t m = 0; m < classes; ++m) probs[b * classes + m] = std::exp(row[m] - log_norm);
  }
  Tensor result = detail::make_result({1}, {total / static_cast<double>(batch)}, "nll_loss", {&logits});
  if (result.requires_grad()) {
    active_tape()->record(result.node(), [ln = logits.node(), on = result.node(), probs = std::move(probs),
                                          labels = std::vector<std::size_t>(labels.begin(), labels.end()), batch,
                                          classes] {
      auto& g = ln->ensure_grad();
      const double scale = on->grad[0] / static_cast<double>(batch);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t m = 0; m < classes; ++m)
          g[b * classes + m] += scale * (probs[b * classes + m] - (m == labels[b] ? 1.0 : 0.0));
    });
  }
  return result;
}

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update using each parameter's accumulated gradient.
/// A parameter without a gradient buffer is treated as having zero gradient.
inline void adam_step(std::span<NamedParameter> params, AdamState& state) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), 0.0);
      state.v.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("Adam state does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].tensor.numel()) {
      throw ShapeError("Adam state shape mismatch for parameter '" + params[i].name + "'");
    }
    if (params[i].tensor.has_grad()) {
      for (double g : params[i].tensor.grad()) {
        if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + params[i].name + "'");
      }
    }
  }
  ++state.step;
  const double correction1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& t = params[i].tensor;
    auto w = t.mutable_data();
    const bool has = t.has_grad();
    const auto g = has ? t.grad() : std::span<const double>{};
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = has ? g[j] : 0.0;
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
      const double mhat = m[j] / correction1;
      const double vhat = v[j] / correction2;
      w[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
inline void clip_gradients(std::span<NamedParameter> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    if (p.tensor.has_grad())
      for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double factor = max_norm / norm;
  for (auto& p : params)
    if (p.tensor.has_grad())
      for (double& g : p.tensor.mutable_grad()) g *= factor;
}

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 50;
  std::size_t eval_every = 1;
  std::uint64_t seed = 0;
  Metric metric = Metric::accuracy;
  double grad_clip = 0.0;  // 0 disables clipping
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    std::vector<std::string> bad;
    if (!(lr > 0.0)) bad.push_back("lr must be positive");
    if (batch_size == 0) bad.push_back("batch_size must be >= 1");
    if (max_epochs == 0) bad.push_back("max_epochs must be >= 1");
    if (eval_every == 0) bad.push_back("eval_every must be >= 1");
    if (grad_clip < 0.0) bad.push_back("grad_clip must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) bad.push_back("Adam betas must lie in [0, 1)");
    if (!(eps > 0.0)) bad.push_back("eps must be positive");
    if (bad.empty()) return;
    std::string msg = "invalid train config:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw ConfigError(msg);
  }

  bool apply(const std::string& key, const std::string& value) {
    using detail::parse_double;
    using detail::parse_unsigned;
    if (key == "lr") lr = parse_double(key, value);
    else if (key == "batch_size") batch_size = parse_unsigned(key, value);
    else if (key == "max_epochs") max_epochs = parse_unsigned(key, value);
    else if (key == "eval_every") eval_every = parse_unsigned(key, value);
    else if (key == "metric") metric = parse_metric(value);
    else if (key == "grad_clip") grad_clip = parse_double(key, value);
    else if (key == "beta1") beta1 = parse_double(key, value);
    else if (key == "beta2") beta2 = parse_double(key, value);
    else if (key == "adam_eps") eps = parse_double(key, value);
    else return false;
    return true;
  }
};

struct EvalRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double valid_metric = 0.0;
};

struct TrainHistory {
  std::vector<EvalRecord> records;
  std::size_t selected_epoch = 0;
  double selected_metric = -std::numeric_limits<double>::infinity();

  /// CSV with header `epoch,train_loss,valid_metric`; floats in shortest
  /// round-trip form so equal histories give equal bytes.
  std::string to_csv() const {
    std::ostringstream os;
    os << "epoch,train_loss,valid_metric\n";
    for (const auto& r : records) {
      os << r.epoch << ',' << detail::format_double(r.train_loss) << ',' << detail::format_double(r.valid_metric)
         << '\n';
    }
    return os.str();
  }

  void write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write history " + path.string());
    out << to_csv();
  }
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, TrainHistory history) : Error(what), history_(std::move(history)) {}
  const TrainHistory& history() const noexcept { return history_; }

 private:
  TrainHistory history_;
};

struct TrainResult {
  TransformerClassifier model;
  TrainHistory history;
};

/// Validation score of `model`. Dropout is off; stochastic attention keeps
/// drawing noise, from a stream that depends only on `rng`.
inline double evaluate(const TransformerClassifier& model, const LabeledDataset& data, Metric metric, RngStream rng) {
  const auto probs = predict_probabilities(model, data, ForwardOptions{}, rng);
  const auto pred = argmax_rows(probs, model.config().num_classes);
  const auto truth = data.labels();
  return score(metric, pred, truth);
}

/// Minibatch Adam on the negative log-likelihood. Evaluates on `valid` every
/// `eval_every` epochs (and after the last one) and returns the weights with
/// the best validation score; ties keep the earlier epoch.
inline TrainResult train(const TransformerClassifier& initial, const LabeledDataset& train_set,
                         const LabeledDataset& valid_set, const TrainConfig& config, RngStream& rng) {
  config.validate();
  if (train_set.empty()) throw DataError("training split is empty");
  if (valid_set.empty()) throw DataError("validation split is empty");
  if (train_set.num_classes > initial.config().num_classes) throw DataError("dataset has more classes than the model");

  TransformerClassifier model = initial.clone();
  TransformerClassifier best = initial.clone();
  TrainHistory history;
  auto params = model.parameters();
  AdamState adam{config.lr, config.beta1, config.beta2, config.eps, 0, {}, {}};
  const RngStream validation_rng = RngStream::for_component(config.seed, "validation");
  const ForwardOptions train_options{.dropout_active = true};

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto order = shuffled_indices(train_set.size(), rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    try {
      for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        const std::size_t stop = std::min(order.size(), start + config.batch_size);
        const Batch batch = make_batch(train_set, std::span(order).subspan(start, stop - start));
        for (auto& p : params) p.tensor.zero_grad();
        Tape tape;
        Tensor loss;
        {
          TapeScope scope(tape);
          loss = nll_loss(model.forward(batch, train_options, rng), batch.labels);
        }
        tape.backward(loss);
        if (config.grad_clip > 0.0) clip_gradients(params, config.grad_clip);
        adam_step(params, adam);
        loss_sum += loss.item() * static_cast<double>(batch.size);
        seen += batch.size;
      }
    } catch (const NumericError& e) {
      throw TrainingDiverged("training diverged in epoch " + std::to_string(epoch) + ": " + e.what(), history);
    }
    if (epoch % config.eval_every != 0 && epoch != config.max_epochs) continue;
    const double metric = evaluate(model, valid_set, config.metric, validation_rng.split(epoch));
    history.records.push_back({epoch, loss_sum / static_cast<double>(seen), metric});
    if (metric > history.selected_metric) {
      history.selected_metric = metric;
      history.selected_epoch = epoch;
      best.assign_from(model);
    }
  }
  for (auto& p : params) p.tensor.zero_grad();
  return {std::move(best), std::move(history)};
}

/// Initializes a model and trains it, deriving both the initialization and
/// the training streams from `config.seed`.
inline TrainResult fit(ModelConfig model_config, const LabeledDataset& train_set, const LabeledDataset& valid_set,
                       const TrainConfig& config) {
  model_config.seed = config.seed;
  RngStream init_rng = RngStream::for_component(config.seed, "init");
  RngStream train_rng = RngStream::for_component(config.seed, "train");
  const auto model = TransformerClassifier::init(model_config, init_rng);
  return train(model, train_set, valid_set, config, train_rng);
}

/// N deterministic-attention members trained with seeds base_seed + 0 ... N-1.
inline std::vector<TransformerClassifier> train_ensemble(ModelConfig model_config, const LabeledDataset& train_set,
                                                         const LabeledDataset& valid_set, TrainConfig config,
                                                         std::size_t members, std::uint64_t base_seed) {
  if (members < 2) throw ContractError("an ensemble needs at least 2 members");
  model_config.attention.mode = AttentionMode::deterministic;
  std::vector<TransformerClassifier> out;
  out.reserve(members);
  for (std::size_t i = 0; i < members; ++i) {
    config.seed = base_seed + i;
    out.push_back(fit(model_config, train_set, valid_set, config).model);
  }
  return out;
}

/// Inference wrapper that keeps dropout switched on at rate `rate`.
/// Attention noise stays off so dropout is the only source of randomness.
class McDropoutModel {
 public:
  McDropoutModel(const TransformerClassifier& model, double rate) : model_(&model), rate_(rate) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("MC-dropout rate must lie in [0, 1)");
    if (model.config().dropout_rate == 0.0) throw ContractError("MC-dropout needs a model trained with dropout");
  }

  const TransformerClassifier& model() const noexcept { return *model_; }
  double rate() const noexcept { return rate_; }

  ForwardOptions options() const {
    return ForwardOptions{.dropout_active = true, .dropout_rate = rate_, .stochastic = false};
  }

  Tensor forward(const Batch& batch, RngStream& rng) const { return model_->forward(batch, options(), rng); }

 private:
  const TransformerClassifier* model_;
  double rate_;
};

inline McDropoutModel mc_dropout_model(const TransformerClassifier& model, double rate) {
  return McDropoutModel(model, rate);
}

}  // namespace stochattn
