#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "coherent_ed/tensor.hpp"

namespace coherent_ed {

struct GradCheckOptions {
  Scalar eps = Scalar(1e-5);
  /// 0 checks every coordinate; otherwise at most this many per input,
  /// drawn uniformly with `seed`.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  Scalar max_rel_error = 0;
  std::size_t worst_input = 0;
  std::size_t worst_coord = 0;
  Scalar worst_analytic = 0;
  Scalar worst_numeric = 0;
  std::size_t coords_checked = 0;
};

/// Compares the tape gradient of a scalar function against central finite
/// differences at every (or a sampled subset of) input coordinate.
///
/// `f` must build its result on the tape it is given and must be a
/// deterministic function of the current input values. Inputs are leaves
/// whose values are perturbed in place and restored.
inline GradCheckReport grad_check_report(const std::function<Tensor(Tape&)>& f,
                                         std::vector<Tensor> inputs,
                                         const GradCheckOptions& opts = {}) {
  for (Tensor& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  {
    Tape tape;
    Tensor loss = f(tape);
    backward(loss, tape);
  }
  auto eval = [&f]() {
    Tape tape = Tape::no_grad();
    return f(tape).item();
  };

  GradCheckReport report;
  Rng rng(opts.seed);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor& in = inputs[i];
    std::vector<std::size_t> coords(in.numel());
    for (std::size_t c = 0; c < coords.size(); ++c) coords[c] = c;
    if (opts.max_coords_per_input > 0 && coords.size() > opts.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t c : coords) {
      const Scalar saved = in.values()[c];
      in.values()[c] = saved + opts.eps;
      const Scalar up = eval();
      in.values()[c] = saved - opts.eps;
      const Scalar down = eval();
      in.values()[c] = saved;
      const Scalar numeric = (up - down) / (Scalar(2) * opts.eps);
      const Scalar analytic = in.grad()[c];
      const Scalar denom = std::max({std::abs(analytic), std::abs(numeric), Scalar(1e-8)});
      const Scalar err = std::abs(analytic - numeric) / denom;
      ++report.coords_checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_input = i;
        report.worst_coord = c;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

/// Maximum relative error between analytic and central-difference gradients.
inline Scalar grad_check(const std::function<Tensor(Tape&)>& f, std::vector<Tensor> inputs,
                         Scalar eps = Scalar(1e-5)) {
  GradCheckOptions opts;
  opts.eps = eps;
  return grad_check_report(f, std::move(inputs), opts).max_rel_error;
}

}  // namespace coherent_ed
