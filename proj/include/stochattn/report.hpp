#pragma once

// Text, JSON-lines and CSV renderings of uncertainty reports.

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "stochattn/model.hpp"
#include "stochattn/uncertainty.hpp"

namespace stochattn {

/// One method's ID and (optionally) OOD results.
struct MethodResult {
  std::string method;
  UncertaintyReport id;
  std::optional<UncertaintyReport> ood;
  double id_prob_std = 0.0;   // mean per-example std of p(correct)
  double ood_prob_std = 0.0;
};

namespace detail {

// Code points, so that "±" counts as one column.
inline std::size_t display_width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char ch : s) n += (ch & 0xC0) != 0x80 ? 1 : 0;
  return n;
}

inline std::string pad(const std::string& s, std::size_t width) {
  const std::size_t shown = display_width(s);
  return shown >= width ? s : s + std::string(width - shown, ' ');
}

inline std::string signed_points(double delta) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.2f", 100.0 * delta);
  return buf;
}

}  // namespace detail

/// Table with columns method, ID%, OOD%, delta ID, delta OOD. Deltas are in
/// points against row `baseline`.
inline std::string render_table(const std::vector<MethodResult>& rows, std::size_t baseline = 0) {
  if (rows.empty()) return {};
  if (baseline >= rows.size()) throw ContractError("render_table: baseline row out of range");
  const auto& base = rows[baseline];
  std::vector<std::vector<std::string>> cells{{"method", "ID %", "OOD %", "dID", "dOOD", "ID p-std", "OOD p-std"}};
  for (const auto& r : rows) {
    char id_std[32], ood_std[32];
    std::snprintf(id_std, sizeof id_std, "%.4f", r.id_prob_std);
    std::snprintf(ood_std, sizeof ood_std, "%.4f", r.ood_prob_std);
    cells.push_back({r.method, format_mean_std(r.id.mean, r.id.std),
                     r.ood ? format_mean_std(r.ood->mean, r.ood->std) : "-", detail::signed_points(r.id.mean - base.id.mean),
                     r.ood && base.ood ? detail::signed_points(r.ood->mean - base.ood->mean) : "-", id_std,
                     r.ood ? ood_std : "-"});
  }
  std::vector<std::size_t> width(cells.front().size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], detail::display_width(row[c]));
  std::ostringstream os;
  os << "metric: " << to_string(base.id.metric) << ", runs: " << base.id.runs << ", seed: " << base.id.seed << '\n';
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) os << detail::pad(row[c], width[c] + 2);
    os << '\n';
  }
  return os.str();
}

inline nlohmann::json to_json(const UncertaintyReport& r) {
  return nlohmann::json{{"method", r.method}, {"dataset", r.dataset}, {"metric", to_string(r.metric)},
                        {"mean", r.mean},     {"std", r.std},         {"T", r.runs},
                        {"seed", r.seed},     {"per_run", r.per_run}};
}

/// One JSON object per line.
inline std::string to_jsonl(const std::vector<UncertaintyReport>& reports) {
  std::string out;
  for (const auto& r : reports) out += to_json(r).dump() + '\n';
  return out;
}

/// Per-example CSV. `prefix` tags the id column, e.g. "id" or "ood".
inline void append_examples_csv(std::string& out, const std::vector<ExampleRecord>& records, const std::string& prefix) {
  if (out.empty()) out = "id,label,prob_corr_mean,prob_corr_std,correct,total\n";
  for (const auto& r : records) {
    out += prefix + ':' + std::to_string(r.id) + ',' + std::to_string(r.label) + ',' +
           detail::format_double(r.prob_correct_mean) + ',' + detail::format_double(r.prob_correct_std) + ',' +
           std::to_string(r.correct) + ',' + std::to_string(r.total) + '\n';
  }
}

}  // namespace stochattn
