#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "coherent_ed/parameters.hpp"

namespace coherent_ed {

/// Global L2 norm over the grads of trainable parameters.
inline double global_grad_norm(const ParameterStore& store) {
  double sq = 0;
  for (const auto& e : store.entries()) {
    if (!e.tensor.requires_grad()) continue;
    for (Scalar g : e.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

/// Rescales trainable grads so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_grad_norm(ParameterStore& store, double max_norm) {
  const double norm = global_grad_norm(store);
  if (norm > max_norm && norm > 0) {
    const Scalar factor = static_cast<Scalar>(max_norm / (norm + 1e-12));
    for (const auto& e : store.entries()) {
      if (!e.tensor.requires_grad()) continue;
      Tensor t = e.tensor;
      for (Scalar& g : t.grad()) g *= factor;
    }
  }
  return norm;
}

/// Linear warmup to `peak`, then linear decay to zero at `total_steps`.
struct WarmupDecaySchedule {
  double peak = 1e-3;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;

  double at(std::size_t step) const {
    if (warmup_steps > 0 && step < warmup_steps) {
      return peak * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    }
    if (total_steps <= warmup_steps) return peak;
    const double remaining = static_cast<double>(total_steps - std::min(step, total_steps));
    return peak * remaining / static_cast<double>(total_steps - warmup_steps);
  }
};

/// Adam with decoupled weight decay. Weight decay applies to rank >= 2
/// parameters only (matrices and embedding tables).
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
  };

  AdamW() = default;
  explicit AdamW(Options opts) : opts_(opts) {}

  /// Updates every trainable parameter from its current grad.
  void step(ParameterStore& store, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (const auto& e : store.entries()) {
      if (!e.tensor.requires_grad()) continue;
      auto& st = state_[e.name];
      if (st.m.size() != e.tensor.numel()) {
        st.m.assign(e.tensor.numel(), 0.0);
        st.v.assign(e.tensor.numel(), 0.0);
      }
      Tensor p = e.tensor;
      auto w = p.values();
      auto g = p.grad();
      const bool decay = p.rank() >= 2 && opts_.weight_decay > 0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        st.m[i] = opts_.beta1 * st.m[i] + (1.0 - opts_.beta1) * gi;
        st.v[i] = opts_.beta2 * st.v[i] + (1.0 - opts_.beta2) * gi * gi;
        const double mhat = st.m[i] / c1;
        const double vhat = st.v[i] / c2;
        double wi = static_cast<double>(w[i]);
        if (decay) wi -= lr * opts_.weight_decay * wi;
        wi -= lr * mhat / (std::sqrt(vhat) + opts_.eps);
        w[i] = static_cast<Scalar>(wi);
      }
    }
  }

  std::size_t steps_taken() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  Options opts_;
  std::size_t t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace coherent_ed
