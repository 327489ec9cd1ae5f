#pragma once

// Multi-run predictive inference and the reports built on it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stochattn/data.hpp"
#include "stochattn/errors.hpp"
#include "stochattn/metrics.hpp"
#include "stochattn/model.hpp"
#include "stochattn/rng.hpp"
#include "stochattn/train.hpp"

namespace stochattn {

/// Per-run class probabilities, [runs, examples, classes] row-major.
struct RunMatrix {
  std::size_t runs = 0;
  std::size_t examples = 0;
  std::size_t classes = 0;
  std::vector<double> probabilities;
  std::vector<std::uint64_t> run_seeds;

  double prob(std::size_t run, std::size_t example, std::size_t cls) const {
    return probabilities[(run * examples + example) * classes + cls];
  }

  std::span<const double> run(std::size_t t) const {
    return std::span<const double>(probabilities).subspan(t * examples * classes, examples * classes);
  }

  std::vector<std::size_t> predicted_labels(std::size_t t) const { return argmax_rows(run(t), classes); }

  /// Average of the T probability vectors of one example.
  std::vector<double> mean_prediction(std::size_t example) const {
    std::vector<double> out(classes, 0.0);
    for (std::size_t t = 0; t < runs; ++t)
      for (std::size_t m = 0; m < classes; ++m) out[m] += prob(t, example, m);
    for (double& v : out) v /= static_cast<double>(runs);
    return out;
  }
};

/// Something that yields one [examples, classes] probability matrix per run.
class Predictor {
 public:
  using RunFn = std::function<std::vector<double>(const LabeledDataset&, std::size_t run, RngStream&)>;

  Predictor(std::string name, std::size_t classes, RunFn fn, std::optional<std::size_t> fixed_runs = std::nullopt)
      : name_(std::move(name)), classes_(classes), fn_(std::move(fn)), fixed_runs_(fixed_runs) {}

  const std::string& name() const noexcept { return name_; }
  std::size_t classes() const noexcept { return classes_; }
  /// Set for ensembles, whose run count is the member count.
  std::optional<std::size_t> fixed_runs() const noexcept { return fixed_runs_; }

  std::vector<double> run(const LabeledDataset& data, std::size_t index, RngStream& rng) const {
    return fn_(data, index, rng);
  }

 private:
  std::string name_;
  std::size_t classes_;
  RunFn fn_;
  std::optional<std::size_t> fixed_runs_;
};

/// Plain inference: dropout off, attention noise drawn iff the model is stochastic.
inline Predictor model_predictor(const TransformerClassifier& model, std::string name = "model") {
  return Predictor(std::move(name), model.config().num_classes,
                   [&model](const LabeledDataset& data, std::size_t, RngStream& rng) {
                     return predict_probabilities(model, data, ForwardOptions{}, rng);
                   });
}

inline Predictor mc_dropout_predictor(const McDropoutModel& wrapper, std::string name = "mc-dropout") {
  return Predictor(std::move(name), wrapper.model().config().num_classes,
                   [wrapper](const LabeledDataset& data, std::size_t, RngStream& rng) {
                     return predict_probabilities(wrapper.model(), data, wrapper.options(), rng);
                   });
}

/// Run t is member t's deterministic forward pass.
inline Predictor ensemble_predictor(std::span<const TransformerClassifier> members, std::string name = "ensemble") {
  if (members.empty()) throw ContractError("ensemble predictor needs members");
  return Predictor(
      std::move(name), members.front().config().num_classes,
      [members](const LabeledDataset& data, std::size_t run, RngStream& rng) {
        return predict_probabilities(members[run], data, ForwardOptions{.stochastic = false}, rng);
      },
      members.size());
}

/// T forward passes over `data`; run t uses the child stream rng.split(t).
/// For predictors with a fixed run count (ensembles) `runs` is ignored.
inline RunMatrix multi_run_predict(const Predictor& predictor, const LabeledDataset& data, std::size_t runs,
                                   const RngStream& rng) {
  const std::size_t t_count = predictor.fixed_runs().value_or(runs);
  if (t_count < 1) throw ContractError("multi_run_predict needs at least one run");
  if (data.empty()) throw DataError("cannot predict on an empty dataset");
  RunMatrix out{t_count, data.size(), predictor.classes(), {}, {}};
  out.probabilities.reserve(t_count * data.size() * predictor.classes());
  for (std::size_t t = 0; t < t_count; ++t) {
    RngStream stream = rng.split(t);
    out.run_seeds.push_back(mix64(stream.seed() ^ mix64(stream.stream_id())));
    const auto probs = predictor.run(data, t, stream);
    if (probs.size() != data.size() * predictor.classes()) throw ContractError("predictor returned a malformed matrix");
    out.probabilities.insert(out.probabilities.end(), probs.begin(), probs.end());
  }
  return out;
}

/// Sample standard deviation (n - 1); exactly 0 for fewer than two values or
/// identical values.
inline double sample_std(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); })) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

inline double mean_of(std::span<const double> values) {
  double s = 0.0;
  for (double v : values) s += v;
  return values.empty() ? 0.0 : s / static_cast<double>(values.size());
}

struct UncertaintyReport {
  std::string method;
  std::string dataset;  // "ID" or "OOD"
  Metric metric = Metric::accuracy;
  std::vector<double> per_run;
  double mean = 0.0;
  double std = 0.0;
  std::size_t runs = 0;
  std::uint64_t seed = 0;
};

/// Mean and standard deviation rendered in percent, e.g. "87.63 ± 0.017".
inline std::string format_mean_std(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f \xC2\xB1 %.3f", 100.0 * mean, 100.0 * std);
  return buf;
}

/// Scores every run on its argmax labels, then aggregates across runs.
inline UncertaintyReport summarize(const RunMatrix& runs, std::span<const std::size_t> truth, Metric metric,
                                   std::string method = {}, std::string dataset = {}, std::uint64_t seed = 0) {
  if (truth.size() != runs.examples) throw ContractError("summarize: truth length does not match run matrix");
  UncertaintyReport r{std::move(method), std::move(dataset), metric, {}, 0.0, 0.0, runs.runs, seed};
  for (std::size_t t = 0; t < runs.runs; ++t) r.per_run.push_back(score(metric, runs.predicted_labels(t), truth));
  r.mean = mean_of(r.per_run);
  r.std = sample_std(r.per_run);
  return r;
}

struct ExampleRecord {
  std::size_t id = 0;
  std::size_t label = 0;
  double prob_correct_mean = 0.0;
  double prob_correct_std = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
};

/// Per example: mean and sample std of p(true label) across runs, and how
/// many runs put their argmax on the true label.
inline std::vector<ExampleRecord> example_report(const RunMatrix& runs, std::span<const std::size_t> truth) {
  if (truth.size() != runs.examples) throw ContractError("example_report: truth length does not match run matrix");
  std::vector<ExampleRecord> out;
  out.reserve(runs.examples);
  std::vector<double> p(runs.runs);
  for (std::size_t i = 0; i < runs.examples; ++i) {
    ExampleRecord rec{i, truth[i], 0.0, 0.0, 0, runs.runs};
    for (std::size_t t = 0; t < runs.runs; ++t) {
      p[t] = runs.prob(t, i, truth[i]);
      const auto row = runs.run(t).subspan(i * runs.classes, runs.classes);
      const auto arg = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      rec.correct += arg == truth[i] ? 1 : 0;
    }
    rec.prob_correct_mean = mean_of(p);
    rec.prob_correct_std = sample_std(p);
    out.push_back(rec);
  }
  return out;
}

/// "0.75 ± 0.001, 10/10"
inline std::string format_example(const ExampleRecord& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.2f \xC2\xB1 %.3f, %zu/%zu", r.prob_correct_mean, r.prob_correct_std, r.correct,
                r.total);
  return buf;
}

inline double mean_prob_correct_std(std::span<const ExampleRecord> records) {
  double s = 0.0;
  for (const auto& r : records) s += r.prob_correct_std;
  return records.empty() ? 0.0 : s / static_cast<double>(records.size());
}

/// KL(a || a_hat) with `a` renormalized to sum to 1 and 0 log 0 = 0. Returns
/// +infinity when a_hat has a zero where a does not.
inline double kl_divergence(std::span<const double> a, std::span<const double> a_hat) {
  if (a.size() != a_hat.size() || a.empty()) throw ContractError("kl_divergence: rows must be non-empty and equal length");
  double total = 0.0;
  for (double v : a) {
    if (v < 0.0) throw ContractError("kl_divergence: negative probability");
    total += v;
  }
  if (!(total > 0.0)) throw ContractError("kl_divergence: reference row has zero mass");
  double kl = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double p = a[j] / total;
    if (p == 0.0) continue;
    if (a_hat[j] <= 0.0) return std::numeric_limits<double>::infinity();
    kl += p * std::log(p / a_hat[j]);
  }
  return std::max(kl, 0.0);
}

/// Mean KL(deterministic row || stochastic row) for one layer.
struct LayerDivergence {
  std::size_t layer = 0;
  double mean_kl = 0.0;
  std::size_t rows = 0;
};

/// Compares the value-attention rows of a noise-free forward pass with those of
/// a noisy pass on the same inputs, sampling at most `max_rows` unpadded query
/// rows per layer.
inline std::vector<LayerDivergence> attention_kl_report(const TransformerClassifier& model, const LabeledDataset& data,
                                                        RngStream rng, std::size_t max_rows = 64,
                                                        std::size_t max_examples = 16) {
  if (data.empty()) throw DataError("attention_kl_report needs data");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < std::min(max_examples, data.size()); ++i) idx.push_back(i);
  const Batch batch = make_batch(data, idx);
  AttentionTrace clean, noisy;
  RngStream r1 = rng.split(1), r2 = rng.split(2);
  model.forward(batch, ForwardOptions{.stochastic = false, .trace = &clean}, r1);
  model.forward(batch, ForwardOptions{.stochastic = true, .trace = &noisy}, r2);

  std::vector<LayerDivergence> out;
  RngStream picker = rng.split(3);
  for (std::size_t layer = 0; layer < clean.value_attention.size(); ++layer) {
    const Tensor& a = clean.value_attention[layer];
    const Tensor& b = noisy.value_attention[layer];
    const std::size_t heads = a.dim(1), l = a.dim(2);
    std::vector<std::size_t> candidates;  // flat row index (batch, head, query)
    for (std::size_t s = 0; s < batch.size; ++s)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t q = 0; q < l; ++q)
          if (!batch.mask.is_padded(s, q)) candidates.push_back((s * heads + h) * l + q);
    const auto order = shuffled_indices(candidates.size(), picker);
    LayerDivergence d{layer, 0.0, std::min(max_rows, candidates.size())};
    for (std::size_t k = 0; k < d.rows; ++k) {
      const std::size_t row = candidates[order[k]];
      d.mean_kl += kl_divergence(a.data().subspan(row * l, l), b.data().subspan(row * l, l));
    }
    if (d.rows) d.mean_kl /= static_cast<double>(d.rows);
    out.push_back(d);
  }
  return out;
}

struct BiasVariance {
  double bias_sq = 0.0;
  double variance = 0.0;
};

/// Squared bias and variance of the predicted class-1 probability phi(x)
/// against the known truth f(x), averaged over examples. Expectations are
/// empirical over runs; the irreducible-error term is not estimated.
inline BiasVariance bias_variance_probe(const RunMatrix& runs, const LabeledDataset& data) {
  if (!data.class1_probability) throw ContractError("bias_variance_probe needs a dataset with known class probabilities");
  const auto& truth = *data.class1_probability;
  if (truth.size() != runs.examples) throw ContractError("bias_variance_probe: dataset does not match run matrix");
  if (runs.classes != 2) throw ContractError("bias_variance_probe is defined for binary tasks");
  BiasVariance out;
  for (std::size_t i = 0; i < runs.examples; ++i) {
    double mean = 0.0;
    for (std::size_t t = 0; t < runs.runs; ++t) mean += runs.prob(t, i, 1);
    mean /= static_cast<double>(runs.runs);
    double var = 0.0;
    for (std::size_t t = 0; t < runs.runs; ++t) var += (runs.prob(t, i, 1) - mean) * (runs.prob(t, i, 1) - mean);
    var /= static_cast<double>(runs.runs);
    out.bias_sq += (mean - truth[i]) * (mean - truth[i]);
    out.variance += var;
  }
  out.bias_sq /= static_cast<double>(runs.examples);
  out.variance /= static_cast<double>(runs.examples);
  return out;
}

}  // namespace stochattn
