#pragma once

#include <span>
#include <vector>

#include "dhan/error.hpp"

namespace dhan {

// Mann-Whitney AUC via rank sums, ties counted half, O(n log n).
double auc(std::span<const double> scores, std::span<const int> labels);

// Relative improvement over a baseline above the 0.5 random-guess floor,
// in percent: ((measured - 0.5) / (base - 0.5) - 1) * 100.
double rela_impr(double measured_auc, double base_auc);

// Plain negative log-likelihood of probabilities (no tape), clamped like the
// training loss.
double nll_value(std::span<const double> probs, std::span<const int> labels);

struct Aggregate {
  double mean = 0.0;
  double std_pop = 0.0;  // population standard deviation
};

Aggregate aggregate(std::span<const double> values);

}  // namespace dhan
