#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "stochattn/errors.hpp"

namespace stochattn {

enum class Metric { accuracy, mcc };

inline std::string to_string(Metric m) { return m == Metric::accuracy ? "accuracy" : "mcc"; }

inline Metric parse_metric(const std::string& name) {
  if (name == "accuracy") return Metric::accuracy;
  if (name == "mcc") return Metric::mcc;
  throw ConfigError("unknown metric '" + name + "' (expected accuracy or mcc)");
}

inline double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> truth) {
  if (predictions.size() != truth.size()) throw ContractError("accuracy: prediction and truth lengths differ");
  if (truth.empty()) throw ContractError("accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predictions[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

/// Binary confusion counts with label 1 as the positive class.
struct ConfusionCounts {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;

  static ConfusionCounts tally(std::span<const std::size_t> predictions, std::span<const std::size_t> truth) {
    if (predictions.size() != truth.size()) throw ContractError("confusion: prediction and truth lengths differ");
    ConfusionCounts c;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (predictions[i] > 1 || truth[i] > 1) throw ContractError("MCC requires binary labels");
      if (predictions[i] == 1) (truth[i] == 1 ? c.tp : c.fp)++;
      else (truth[i] == 0 ? c.tn : c.fn)++;
    }
    return c;
  }

  /// Matthews correlation; 0 whenever a marginal is empty.
  double mcc() const {
    const double ftp = static_cast<double>(tp), ftn = static_cast<double>(tn);
    const double ffp = static_cast<double>(fp), ffn = static_cast<double>(fn);
    const double denom = (ftp + ffp) * (ftp + ffn) * (ftn + ffp) * (ftn + ffn);
    if (denom == 0.0) return 0.0;
    return (ftp * ftn - ffp * ffn) / std::sqrt(denom);
  }
};

inline double mcc(std::span<const std::size_t> predictions, std::span<const std::size_t> truth) {
  return ConfusionCounts::tally(predictions, truth).mcc();
}

inline double score(Metric metric, std::span<const std::size_t> predictions, std::span<const std::size_t> truth) {
  return metric == Metric::accuracy ? accuracy(predictions, truth) : mcc(predictions, truth);
}

}  // namespace stochattn
