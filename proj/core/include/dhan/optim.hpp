#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dhan/error.hpp"
#include "dhan/tensor.hpp"

namespace dhan {

template <class S>
struct NamedParam {
  std::string name;
  TensorT<S>* tensor;
};

template <class S>
using ParamRefs = std::vector<NamedParam<S>>;

// Bias-corrected adaptive-moment update. Moment buffers are keyed by the
// position in the ParamRefs list, which must stay stable across steps.
template <class S>
class AdamT {
 public:
  struct Options {
    S lr = S(1e-3);
    S beta1 = S(0.9);
    S beta2 = S(0.999);
    S eps = S(1e-8);
  };

  AdamT() = default;
  explicit AdamT(Options o) : opt_(o) {}

  std::int64_t steps() const { return t_; }
  const Options& options() const { return opt_; }

  void step(ParamRefs<S>& params, const TapeT<S>& tape) {
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (size_t i = 0; i < params.size(); ++i) {
        m_[i].assign(params[i].tensor->values.size(), S(0));
        v_[i].assign(params[i].tensor->values.size(), S(0));
      }
    }
    if (m_.size() != params.size())
      throw ContractError("adam: parameter list changed between steps");
    ++t_;
    const S c1 = S(1) - std::pow(opt_.beta1, static_cast<S>(t_));
    const S c2 = S(1) - std::pow(opt_.beta2, static_cast<S>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      TensorT<S>& p = *params[i].tensor;
      const std::vector<S>& g = tape.grad_of(p);
      if (g.size() != p.values.size())
        throw ShapeError("adam: gradient size " + std::to_string(g.size()) +
                         " does not match parameter " + params[i].name);
      std::vector<S>& m = m_[i];
      std::vector<S>& v = v_[i];
      for (size_t k = 0; k < g.size(); ++k) {
        m[k] = opt_.beta1 * m[k] + (S(1) - opt_.beta1) * g[k];
        v[k] = opt_.beta2 * v[k] + (S(1) - opt_.beta2) * g[k] * g[k];
        const S mhat = m[k] / c1;
        const S vhat = v[k] / c2;
        p.values[k] -= opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps);
      }
    }
  }

 private:
  Options opt_;
  std::int64_t t_ = 0;
  std::vector<std::vector<S>> m_, v_;
};

using Adam = AdamT<float>;

}  // namespace dhan
