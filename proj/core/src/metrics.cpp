#include "dhan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dhan {

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw ContractError("auc: " + std::to_string(scores.size()) + " scores vs " +
                        std::to_string(labels.size()) + " labels");
  std::int64_t n_pos = 0, n_neg = 0;
  for (int y : labels) (y ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0)
    throw ContractError("auc: undefined for single-class input");

  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] < scores[b]; });

  // Average ranks over tie runs; rank sums of half-integers are exact in
  // double, so the result matches pair counting bit for bit.
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (size_t k = i; k < j; ++k)
      if (labels[order[k]]) rank_sum_pos += avg_rank;
    i = j;
  }
  const double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double rela_impr(double measured_auc, double base_auc) {
  if (base_auc == 0.5)
    throw ContractError("rela_impr: base AUC of 0.5 (division by zero)");
  return ((measured_auc - 0.5) / (base_auc - 0.5) - 1.0) * 100.0;
}

double nll_value(std::span<const double> probs, std::span<const int> labels) {
  if (probs.size() != labels.size())
    throw ContractError("nll_value: batch mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], 1e-7, 1.0 - 1e-7);
    acc -= labels[i] ? std::log(p) : std::log(1.0 - p);
  }
  return acc / static_cast<double>(probs.size());
}

Aggregate aggregate(std::span<const double> values) {
  Aggregate a;
  if (values.empty()) return a;
  for (double v : values) a.mean += v;
  a.mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - a.mean) * (v - a.mean);
  a.std_pop = std::sqrt(var / static_cast<double>(values.size()));
  return a;
}

}  // namespace dhan
