#pragma once

// Central finite-difference verification of tape gradients. Runs in double;
// reports the worst relative error over sampled coordinates, never asserts.

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "dhan/optim.hpp"
#include "dhan/tensor.hpp"

namespace dhan {

struct GradCheckOptions {
  double step = 1e-5;
  int max_coords_per_param = 8;
};

// fn(tape) must build the scalar loss from the given parameters; grad_check
// watches them on its own tape before calling fn.
template <class LossFn>
double grad_check(LossFn&& fn, ParamRefs<double>& params, std::uint64_t seed,
                  GradCheckOptions opt = {}) {
  Tape64 tape;
  for (auto& p : params) tape.watch(*p.tensor);
  Tensor64 loss = fn(tape);
  if (loss.numel() != 1)
    throw ContractError("grad_check: loss must be scalar, got shape " + shape_str(loss.shape));
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(tape.grad_of(*p.tensor));

  auto eval = [&]() {
    Tape64 t;
    t.recording = false;
    return fn(t).values[0];
  };

  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  double max_rel = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    std::vector<double>& v = params[pi].tensor->values;
    const int n = static_cast<int>(v.size());
    std::vector<int> coords(n);
    for (int i = 0; i < n; ++i) coords[i] = i;
    if (n > opt.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_coords_per_param);
    }
    for (int c : coords) {
      const double orig = v[c];
      v[c] = orig + opt.step;
      const double fp = eval();
      v[c] = orig - opt.step;
      const double fm = eval();
      v[c] = orig;
      const double numeric = (fp - fm) / (2.0 * opt.step);
      const double a = analytic[pi][c];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace dhan
