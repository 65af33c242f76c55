#include "dhan/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <thread>

#include <json.hpp>

namespace dhan {

void TrainConfig::validate() const {
  if (learning_rate <= 0) throw ConfigError("train.learning_rate: must be positive");
  if (batch_size < 1) throw ConfigError("train.batch_size: must be >= 1");
  if (epochs < 0) throw ConfigError("train.epochs: must be >= 0");
  if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1))
    throw ConfigError("train.beta1/beta2: must be in (0, 1)");
  if (epsilon <= 0) throw ConfigError("train.epsilon: must be positive");
  if (eval_every < 1) throw ConfigError("train.eval_every: must be >= 1");
  if (runs < 1) throw ConfigError("train.runs: must be >= 1");
}

std::vector<double> predict_scores(DhanParams& params, std::span<const Sample> samples,
                                   int batch_size) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (size_t i = 0; i < samples.size(); i += static_cast<size_t>(batch_size)) {
    const size_t n = std::min<size_t>(batch_size, samples.size() - i);
    Tape tape;
    tape.recording = false;
    const Tensor p = forward_batch(tape, params, samples.subspan(i, n));
    for (float v : p.values) out.push_back(v);
  }
  return out;
}

namespace {

std::vector<int> sample_labels(std::span<const Sample> samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) out.push_back(s.label);
  return out;
}

double eval_slice_loss(DhanParams& params, std::span<const Sample> slice,
                       const std::vector<int>& labels) {
  const std::vector<double> p = predict_scores(params, slice);
  return nll_value(p, labels);
}

double eval_test_auc(DhanParams& params, std::span<const Sample> test,
                     const std::vector<int>& labels) {
  const std::vector<double> p = predict_scores(params, test);
  return auc(p, labels);
}

}  // namespace

RunResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                std::span<const Sample> train_set, std::span<const Sample> test_set) {
  train_cfg.validate();
  if (train_set.empty()) throw ContractError("train: empty training set");

  RunResult res;
  res.seed = train_cfg.seed;
  res.params = DhanParams::init(model_cfg, train_cfg.seed);

  Adam adam(Adam::Options{static_cast<float>(train_cfg.learning_rate),
                          static_cast<float>(train_cfg.beta1), static_cast<float>(train_cfg.beta2),
                          static_cast<float>(train_cfg.epsilon)});

  const std::span<const Sample> slice = train_set.subspan(0, std::min<size_t>(1024, train_set.size()));
  const std::vector<int> slice_labels = sample_labels(slice);
  const std::vector<int> test_labels = sample_labels(test_set);

  auto record = [&](std::int64_t step) {
    res.curve.push_back(CurvePoint{step, eval_slice_loss(res.params, slice, slice_labels),
                                   eval_test_auc(res.params, test_set, test_labels)});
  };
  record(0);

  std::mt19937 shuffle_rng(static_cast<std::uint32_t>(train_cfg.seed) + 1);
  std::vector<int> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  std::int64_t step = 0;
  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(train_cfg.batch_size)) {
      const size_t n = std::min<size_t>(train_cfg.batch_size, order.size() - start);
      std::vector<Sample> batch;
      batch.reserve(n);
      std::vector<int> labels;
      labels.reserve(n);
      for (size_t i = 0; i < n; ++i) {
        batch.push_back(train_set[order[start + i]]);
        labels.push_back(batch.back().label);
      }
      try {
        Tape tape;
        ParamRefs<float> refs = res.params.refs();
        for (auto& r : refs) tape.watch(*r.tensor);
        const Tensor p = forward_batch<float>(tape, res.params, batch);
        const Tensor loss = nll_loss(tape, p, labels);
        if (!std::isfinite(loss.values[0]))
          throw NumericError("non-finite loss");
        tape.backward(loss);
        adam.step(refs, tape);
      } catch (const NumericError& e) {
        throw NumericError("train: aborted at step " + std::to_string(step) + " (lr=" +
                           std::to_string(train_cfg.learning_rate) + "): " + e.what());
      }
      ++step;
      if (step % train_cfg.eval_every == 0) record(step);
    }
  }
  if (res.curve.back().step != step) record(step);
  res.final_loss = res.curve.back().train_loss;
  res.final_auc = res.curve.back().test_auc;
  return res;
}

RepeatOutcome repeat_runs(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                          std::span<const Sample> train_set, std::span<const Sample> test_set,
                          int n, std::uint64_t base_seed) {
  if (n < 1) throw ConfigError("repeat_runs: n must be >= 1");
  RepeatOutcome out;
  out.runs.resize(n);

  auto run_one = [&](int i) {
    TrainConfig tc = train_cfg;
    tc.seed = base_seed + static_cast<std::uint64_t>(i);
    out.runs[i] = train(model_cfg, tc, train_set, test_set);
  };

  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (train_cfg.parallel_runs && n > 1 && hw > 1) {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(n);
    std::atomic<int> next{0};
    const unsigned workers = std::min<unsigned>(hw, static_cast<unsigned>(n));
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (;;) {
          const int i = next.fetch_add(1);
          if (i >= n) return;
          try {
            run_one(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    for (std::thread& t : pool) t.join();
    for (std::exception_ptr& e : errors)
      if (e) std::rethrow_exception(e);
  } else {
    for (int i = 0; i < n; ++i) run_one(i);
  }

  std::vector<double> aucs;
  for (const RunResult& r : out.runs) aucs.push_back(r.final_auc);
  out.auc = aggregate(aucs);
  return out;
}

std::vector<AttentionRecord> export_attention(DhanParams& params, const Sample& sample,
                                              const Vocabulary& vocab) {
  Tape tape;
  tape.recording = false;
  std::vector<ForwardTrace<float>> traces;
  forward_batch(tape, params, std::span<const Sample>(&sample, 1), &traces);
  const ForwardTrace<float>& tr = traces[0];

  std::vector<AttentionRecord> out;
  for (const TraceDim<float>& dim : tr.dims)
    for (size_t j = 0; j < dim.levels.size(); ++j) {
      std::vector<AttentionRecord> level;
      for (const TraceGroup<float>& g : dim.levels[j].groups)
        level.push_back(AttentionRecord{dim.name, static_cast<int>(j) + 2,
                                        vocab.name(dim.levels[j].key, g.attr),
                                        static_cast<double>(g.effective_weight)});
      std::stable_sort(level.begin(), level.end(),
                       [](const AttentionRecord& a, const AttentionRecord& b) {
                         return a.weight > b.weight;
                       });
      out.insert(out.end(), level.begin(), level.end());
    }
  return out;
}

// --- artifact formats ------------------------------------------------------

namespace {

std::string fmt(double v, int prec = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

}  // namespace

std::string runs_csv(std::span<const RunRow> rows) {
  std::string out = "model,dataset,run,seed,final_auc,final_loss\n";
  for (const RunRow& r : rows)
    out += r.model + "," + r.dataset + "," + std::to_string(r.run) + "," +
           std::to_string(r.seed) + "," + fmt(r.final_auc) + "," + fmt(r.final_loss) + "\n";
  return out;
}

std::string aggregate_csv(std::span<const AggregateRow> rows) {
  std::string out = "model,dataset,auc_mean,auc_std,relaimpr_vs_base\n";
  for (const AggregateRow& r : rows)
    out += r.model + "," + r.dataset + "," + fmt(r.auc_mean) + "," + fmt(r.auc_std) + "," +
           fmt(r.relaimpr_vs_base, 4) + "\n";
  return out;
}

std::string curves_csv(std::span<const CurvePoint> points) {
  std::string out = "step,train_loss,test_auc\n";
  for (const CurvePoint& p : points)
    out += std::to_string(p.step) + "," + fmt(p.train_loss) + "," + fmt(p.test_auc) + "\n";
  return out;
}

std::string attention_jsonl(std::span<const AttentionRecord> records) {
  std::string out;
  for (const AttentionRecord& r : records) {
    nlohmann::json j{{"dimension", r.dimension},
                     {"level", r.level},
                     {"attribute", r.attribute},
                     {"weight", r.weight}};
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace dhan
