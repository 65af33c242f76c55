#pragma once

// Training loop, repeated runs with mean/std aggregation, and the
// attention-weight export used for model explanation.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dhan/data.hpp"
#include "dhan/metrics.hpp"
#include "dhan/model.hpp"

namespace dhan {

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 32;
  int epochs = 2;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int eval_every = 500;  // steps between curve points
  int runs = 5;
  bool parallel_runs = true;

  void validate() const;
};

struct CurvePoint {
  std::int64_t step = 0;
  double train_loss = 0.0;  // loss on a fixed slice of the training set
  double test_auc = 0.0;
};

struct RunResult {
  std::uint64_t seed = 0;
  double final_auc = 0.0;
  double final_loss = 0.0;
  std::vector<CurvePoint> curve;
  DhanParams params;
};

// Scores with recording off; order follows the input samples.
std::vector<double> predict_scores(DhanParams& params, std::span<const Sample> samples,
                                   int batch_size = 256);

RunResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                std::span<const Sample> train_set, std::span<const Sample> test_set);

struct RepeatOutcome {
  std::vector<RunResult> runs;  // seeds base, base+1, ...
  Aggregate auc;
};

RepeatOutcome repeat_runs(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                          std::span<const Sample> train_set, std::span<const Sample> test_set,
                          int n, std::uint64_t base_seed);

struct AttentionRecord {
  std::string dimension;
  int level = 0;  // attribute levels start at 2; level 1 is the items
  std::string attribute;
  double weight = 0.0;
};

// Per dimension and level, (attribute, effective weight) sorted descending.
std::vector<AttentionRecord> export_attention(DhanParams& params, const Sample& sample,
                                              const Vocabulary& vocab);

// --- artifact formats ------------------------------------------------------

struct RunRow {
  std::string model, dataset;
  int run = 0;
  std::uint64_t seed = 0;
  double final_auc = 0.0, final_loss = 0.0;
};

struct AggregateRow {
  std::string model, dataset;
  double auc_mean = 0.0, auc_std = 0.0, relaimpr_vs_base = 0.0;
};

std::string runs_csv(std::span<const RunRow> rows);
std::string aggregate_csv(std::span<const AggregateRow> rows);
std::string curves_csv(std::span<const CurvePoint> points);
std::string attention_jsonl(std::span<const AttentionRecord> records);

}  // namespace dhan
