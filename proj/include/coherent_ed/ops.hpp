#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "coherent_ed/tensor.hpp"

namespace coherent_ed {

namespace detail {

inline bool any_grad(const Tape& tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape.recording()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

inline Tensor make_result(Shape shape, bool with_grad) {
  Tensor out(std::move(shape));
  if (with_grad) out.set_requires_grad(true);
  return out;
}

inline void require_matrix(const char* op, const Tensor& a) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
  }
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, int axis) {
  const int rank = static_cast<int>(shape.size());
  if (rank == 0) return {};
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw IndexError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (int i = axis + 1; i < rank; ++i) s.inner *= shape[i];
  return s;
}

template <class F, class D>
Tensor unary_op(Tape& tape, const Tensor& x, F forward, D derivative) {
  const bool grad = any_grad(tape, {&x});
  Tensor out = make_result(x.shape(), grad);
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = forward(xv[i]);
  if (grad) {
    tape.record([x, out, derivative]() {
      auto& xn = x.node();
      const auto& on = out.node();
      if (!xn.requires_grad) return;
      for (std::size_t i = 0; i < xn.value.size(); ++i) {
        xn.grad[i] += on.grad[i] * derivative(xn.value[i], on.value[i]);
      }
    });
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra and structure
// ---------------------------------------------------------------------------

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const bool grad = detail::any_grad(tape, {&a, &b});
  Tensor out = detail::make_result({m, n}, grad);
  const Scalar* A = a.values().data();
  const Scalar* B = b.values().data();
  Scalar* C = out.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const Scalar aip = A[i * k + p];
      const Scalar* brow = B + p * n;
      Scalar* crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  if (grad) {
    tape.record([a, b, out, m, k, n]() {
      const Scalar* G = out.node().grad.data();
      auto& an = a.node();
      auto& bn = b.node();
      if (an.requires_grad) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            Scalar acc = 0;
            for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * bn.value[p * n + j];
            an.grad[i * k + p] += acc;
          }
        }
      }
      if (bn.requires_grad) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const Scalar aip = an.value[i * k + p];
            for (std::size_t j = 0; j < n; ++j) bn.grad[p * n + j] += aip * G[i * n + j];
          }
        }
      }
    });
  }
  return out;
}

inline Tensor transpose(Tape& tape, const Tensor& a) {
  detail::require_matrix("transpose", a);
  const std::size_t r = a.dim(0), c = a.dim(1);
  const bool grad = detail::any_grad(tape, {&a});
  Tensor out = detail::make_result({c, r}, grad);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.values()[j * r + i] = a[i * c + j];
  if (grad) {
    tape.record([a, out, r, c]() {
      auto& an = a.node();
      const auto& g = out.node().grad;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) an.grad[i * c + j] += g[j * r + i];
    });
  }
  return out;
}

inline Tensor reshape(Tape& tape, const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  const bool grad = detail::any_grad(tape, {&a});
  Tensor out = detail::make_result(std::move(shape), grad);
  std::copy(a.values().begin(), a.values().end(), out.values().begin());
  if (grad) {
    tape.record([a, out]() {
      auto& an = a.node();
      const auto& g = out.node().grad;
      for (std::size_t i = 0; i < g.size(); ++i) an.grad[i] += g[i];
    });
  }
  return out;
}

/// Embedding lookup: row i of the result is row ids[i] of `table`.
inline Tensor gather_rows(Tape& tape, const Tensor& table, std::span<const std::size_t> ids) {
  detail::require_matrix("gather_rows", table);
  const std::size_t v = table.dim(0), h = table.dim(1);
  for (std::size_t id : ids) {
    if (id >= v) {
      throw IndexError("gather_rows: row " + std::to_string(id) + " outside table of " +
                       std::to_string(v) + " rows");
    }
  }
  const bool grad = detail::any_grad(tape, {&table});
  Tensor out = detail::make_result({ids.size(), h}, grad);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(table.values().begin() + ids[i] * h, h, out.values().begin() + i * h);
  }
  if (grad) {
    std::vector<std::size_t> rows(ids.begin(), ids.end());
    tape.record([table, out, rows = std::move(rows), h]() {
      auto& tn = table.node();
      const auto& g = out.node().grad;
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < h; ++j) tn.grad[rows[i] * h + j] += g[i * h + j];
    });
  }
  return out;
}

inline Tensor slice_rows(Tape& tape, const Tensor& a, std::size_t begin, std::size_t count) {
  detail::require_matrix("slice_rows", a);
  if (begin + count > a.dim(0)) {
    throw IndexError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + shape_str(a.shape()));
  }
  const std::size_t c = a.dim(1);
  const bool grad = detail::any_grad(tape, {&a});
  Tensor out = detail::make_result({count, c}, grad);
  std::copy_n(a.values().begin() + begin * c, count * c, out.values().begin());
  if (grad) {
    tape.record([a, out, begin, c]() {
      auto& an = a.node();
      const auto& g = out.node().grad;
      for (std::size_t i = 0; i < g.size(); ++i) an.grad[begin * c + i] += g[i];
    });
  }
  return out;
}

inline Tensor slice_cols(Tape& tape, const Tensor& a, std::size_t begin, std::size_t count) {
  detail::require_matrix("slice_cols", a);
  if (begin + count > a.dim(1)) {
    throw IndexError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + shape_str(a.shape()));
  }
  const std::size_t r = a.dim(0), c = a.dim(1);
  const bool grad = detail::any_grad(tape, {&a});
  Tensor out = detail::make_result({r, count}, grad);
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(a.values().begin() + i * c + begin, count, out.values().begin() + i * count);
  if (grad) {
    tape.record([a, out, begin, count, r, c]() {
      auto& an = a.node();
      const auto& g = out.node().grad;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j) an.grad[i * c + begin + j] += g[i * count + j];
    });
  }
  return out;
}

inline Tensor concat_rows(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t rows = 0;
  bool grad = false;
  for (const Tensor& p : parts) {
    detail::require_matrix("concat_rows", p);
    if (p.dim(1) != c) {
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts.front().shape()) +
                           " vs " + shape_str(p.shape()));
    }
    rows += p.dim(0);
    grad = grad || detail::any_grad(tape, {&p});
  }
  Tensor out = detail::make_result({rows, c}, grad);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    std::copy(p.values().begin(), p.values().end(), out.values().begin() + offset);
    offset += p.numel();
  }
  if (grad) {
    tape.record([parts, out]() {
      const auto& g = out.node().grad;
      std::size_t off = 0;
      for (const Tensor& p : parts) {
        auto& pn = p.node();
        if (pn.requires_grad) {
          for (std::size_t i = 0; i < pn.value.size(); ++i) pn.grad[i] += g[off + i];
        }
        off += pn.value.size();
      }
    });
  }
  return out;
}

inline Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t r = parts.front().rows();
  std::size_t cols = 0;
  bool grad = false;
  for (const Tensor& p : parts) {
    detail::require_matrix("concat_cols", p);
    if (p.dim(0) != r) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts.front().shape()) +
                           " vs " + shape_str(p.shape()));
    }
    cols += p.dim(1);
    grad = grad || detail::any_grad(tape, {&p});
  }
  Tensor out = detail::make_result({r, cols}, grad);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t pc = p.dim(1);
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(p.values().begin() + i * pc, pc, out.values().begin() + i * cols + offset);
    offset += pc;
  }
  if (grad) {
    tape.record([parts, out, r, cols]() {
      const auto& g = out.node().grad;
      std::size_t off = 0;
      for (const Tensor& p : parts) {
        auto& pn = p.node();
        const std::size_t pc = pn.shape[1];
        if (pn.requires_grad) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < pc; ++j) pn.grad[i * pc + j] += g[i * cols + off + j];
        }
        off += pc;
      }
    });
  }
  return out;
}

/// Row i of the result is row i of `a` where keep_a[i], else row i of `b`.
inline Tensor select_rows(Tape& tape, std::span<const std::uint8_t> keep_a, const Tensor& a,
                          const Tensor& b) {
  detail::require_same_shape("select_rows", a, b);
  detail::require_matrix("select_rows", a);
  if (keep_a.size() != a.dim(0)) {
    throw DimensionError("select_rows: " + std::to_string(keep_a.size()) + " flags for " +
                         shape_str(a.shape()));
  }
  const std::size_t c = a.dim(1);
  const bool grad = detail::any_grad(tape, {&a, &b});
  Tensor out = detail::make_result(a.shape(), grad);
  for (std::size_t i = 0; i < keep_a.size(); ++i) {
    const Tensor& src = keep_a[i] ? a : b;
    std::copy_n(src.values().begin() + i * c, c, out.values().begin() + i * c);
  }
  if (grad) {
    std::vector<std::uint8_t> flags(keep_a.begin(), keep_a.end());
    tape.record([a, b, out, flags = std::move(flags), c]() {
      const auto& g = out.node().grad;
      auto& an = a.node();
      auto& bn = b.node();
      for (std::size_t i = 0; i < flags.size(); ++i) {
        auto& dst = flags[i] ? an : bn;
        if (!dst.requires_grad) continue;
        for (std::size_t j = 0; j < c; ++j) dst.grad[i * c + j] += g[i * c + j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

/// a + b for equal shapes, or a[..., n] + b[n] broadcast over leading axes.
inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  const bool broadcast = a.shape() != b.shape();
  if (broadcast && !(b.rank() == 1 && a.rank() >= 1 && b.numel() == a.cols())) {
    throw DimensionError("add: cannot broadcast " + shape_str(b.shape()) + " onto " +
                         shape_str(a.shape()));
  }
  const bool grad = detail::any_grad(tape, {&a, &b});
  Tensor out = detail::make_result(a.shape(), grad);
  const std::size_t n = b.numel();
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[broadcast ? i % n : i];
  if (grad) {
    tape.record([a, b, out, broadcast, n]() {
      const auto& g = out.node().grad;
      auto& an = a.node();
      auto& bn = b.node();
      if (an.requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) an.grad[i] += g[i];
      if (bn.requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) bn.grad[broadcast ? i % n : i] += g[i];
    });
  }
  return out;
}

inline Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape("sub", a, b);
  const bool grad = detail::any_grad(tape, {&a, &b});
  Tensor out = detail::make_result(a.shape(), grad);
  for (std::size_t i = 0; i < a.numel(); ++i) out.values()[i] = a[i] - b[i];
  if (grad) {
    tape.record([a, b, out]() {
      const auto& g = out.node().grad;
      auto& an = a.node();
      auto& bn = b.node();
      if (an.requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) an.grad[i] += g[i];
      if (bn.requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) bn.grad[i] -= g[i];
    });
  }
  return out;
}

/// Elementwise (Hadamard) product of equal shapes.
inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape("mul", a, b);
  const bool grad = detail::any_grad(tape, {&a, &b});
  Tensor out = detail::make_result(a.shape(), grad);
  for (std::size_t i = 0; i < a.numel(); ++i) out.values()[i] = a[i] * b[i];
  if (grad) {
    tape.record([a, b, out]() {
      const auto& g = out.node().grad;
      auto& an = a.node();
      auto& bn = b.node();
      if (an.requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) an.grad[i] += g[i] * bn.value[i];
      if (bn.requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) bn.grad[i] += g[i] * an.value[i];
    });
  }
  return out;
}

inline Tensor scale(Tape& tape, const Tensor& a, Scalar s) {
  return detail::unary_op(
      tape, a, [s](Scalar x) { return x * s; }, [s](Scalar, Scalar) { return s; });
}

inline Tensor sum(Tape& tape, const Tensor& a) {
  const bool grad = detail::any_grad(tape, {&a});
  Tensor out = detail::make_result({}, grad);
  Scalar acc = 0;
  for (Scalar v : a.values()) acc += v;
  out.values()[0] = acc;
  if (grad) {
    tape.record([a, out]() {
      auto& an = a.node();
      const Scalar g = out.node().grad[0];
      for (auto& v : an.grad) v += g;
    });
  }
  return out;
}

inline Tensor mean(Tape& tape, const Tensor& a) {
  if (a.numel() == 0) throw ContractError("mean of an empty tensor");
  return scale(tape, sum(tape, a), Scalar(1) / static_cast<Scalar>(a.numel()));
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

inline Tensor exp(Tape& tape, const Tensor& x) {
  return detail::unary_op(
      tape, x, [](Scalar v) { return std::exp(v); }, [](Scalar, Scalar y) { return y; });
}

inline Tensor log(Tape& tape, const Tensor& x) {
  return detail::unary_op(
      tape, x, [](Scalar v) { return std::log(v); }, [](Scalar v, Scalar) { return Scalar(1) / v; });
}

inline Scalar stable_sigmoid(Scalar x) {
  if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

inline Tensor sigmoid(Tape& tape, const Tensor& x) {
  return detail::unary_op(
      tape, x, [](Scalar v) { return stable_sigmoid(v); },
      [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

inline Tensor tanh(Tape& tape, const Tensor& x) {
  return detail::unary_op(
      tape, x, [](Scalar v) { return std::tanh(v); },
      [](Scalar, Scalar y) { return Scalar(1) - y * y; });
}

/// GELU, tanh approximation.
inline Tensor gelu(Tape& tape, const Tensor& x) {
  constexpr Scalar kC = Scalar(0.7978845608028654);  // sqrt(2/pi)
  constexpr Scalar kA = Scalar(0.044715);
  return detail::unary_op(
      tape, x,
      [](Scalar v) { return Scalar(0.5) * v * (Scalar(1) + std::tanh(kC * (v + kA * v * v * v))); },
      [](Scalar v, Scalar) {
        const Scalar t = std::tanh(kC * (v + kA * v * v * v));
        const Scalar dt = (Scalar(1) - t * t) * kC * (Scalar(1) + Scalar(3) * kA * v * v);
        return Scalar(0.5) * (Scalar(1) + t) + Scalar(0.5) * v * dt;
      });
}

/// Clamps into [lo, hi]; the gradient is zero where clamping is active.
inline Tensor clamp(Tape& tape, const Tensor& x, Scalar lo, Scalar hi) {
  return detail::unary_op(
      tape, x, [lo, hi](Scalar v) { return std::clamp(v, lo, hi); },
      [lo, hi](Scalar v, Scalar) { return (v < lo || v > hi) ? Scalar(0) : Scalar(1); });
}

/// Inverted dropout. Identity when !training or rate == 0.
inline Tensor dropout(Tape& tape, const Tensor& x, double rate, Rng* rng, bool training) {
  if (!training || rate <= 0.0) return x;
  if (rng == nullptr) throw ContractError("dropout in training mode needs an rng");
  Tensor keep(x.shape());
  std::bernoulli_distribution coin(1.0 - rate);
  const Scalar s = static_cast<Scalar>(1.0 / (1.0 - rate));
  for (auto& v : keep.values()) v = coin(*rng) ? s : Scalar(0);
  return mul(tape, x, keep);
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Softmax along `axis` (negative counts from the end), max-subtracted.
inline Tensor softmax(Tape& tape, const Tensor& x, int axis = -1) {
  const auto s = detail::split_axis(x.shape(), axis);
  const bool grad = detail::any_grad(tape, {&x});
  Tensor out = detail::make_result(x.shape(), grad);
  auto xv = x.values();
  auto yv = out.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      Scalar total = 0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const Scalar e = std::exp(xv[base + j * s.inner] - mx);
        yv[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) yv[base + j * s.inner] /= total;
    }
  }
  if (grad) {
    tape.record([x, out, s]() {
      auto& xn = x.node();
      const auto& on = out.node();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.n * s.inner + in;
          Scalar dot = 0;
          for (std::size_t j = 0; j < s.n; ++j) {
            const std::size_t idx = base + j * s.inner;
            dot += on.grad[idx] * on.value[idx];
          }
          for (std::size_t j = 0; j < s.n; ++j) {
            const std::size_t idx = base + j * s.inner;
            xn.grad[idx] += on.value[idx] * (on.grad[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

inline Tensor log_softmax(Tape& tape, const Tensor& x, int axis = -1) {
  const auto s = detail::split_axis(x.shape(), axis);
  const bool grad = detail::any_grad(tape, {&x});
  Tensor out = detail::make_result(x.shape(), grad);
  auto xv = x.values();
  auto yv = out.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      Scalar total = 0;
      for (std::size_t j = 0; j < s.n; ++j) total += std::exp(xv[base + j * s.inner] - mx);
      const Scalar lse = mx + std::log(total);
      for (std::size_t j = 0; j < s.n; ++j) yv[base + j * s.inner] = xv[base + j * s.inner] - lse;
    }
  }
  if (grad) {
    tape.record([x, out, s]() {
      auto& xn = x.node();
      const auto& on = out.node();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.n * s.inner + in;
          Scalar gsum = 0;
          for (std::size_t j = 0; j < s.n; ++j) gsum += on.grad[base + j * s.inner];
          for (std::size_t j = 0; j < s.n; ++j) {
            const std::size_t idx = base + j * s.inner;
            xn.grad[idx] += on.grad[idx] - std::exp(on.value[idx]) * gsum;
          }
        }
      }
    });
  }
  return out;
}

/// Per-row standardization over the last axis followed by gain and bias.
inline Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                         Scalar eps = Scalar(1e-5)) {
  const std::size_t d = x.cols();
  if (d == 0 || gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: input " + shape_str(x.shape()) + " with gain " +
                         shape_str(gain.shape()) + " and bias " + shape_str(bias.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const bool grad = detail::any_grad(tape, {&x, &gain, &bias});
  Tensor out = detail::make_result(x.shape(), grad);
  std::vector<Scalar> xhat(x.numel());
  std::vector<Scalar> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* xr = x.values().data() + r * d;
    Scalar mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<Scalar>(d);
    Scalar var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<Scalar>(d);
    inv_std[r] = Scalar(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mu) * inv_std[r];
      out.values()[r * d + j] = gain[j] * xhat[r * d + j] + bias[j];
    }
  }
  if (grad) {
    tape.record([x, gain, bias, out, xhat = std::move(xhat), inv_std = std::move(inv_std), d,
                 rows]() {
      const auto& g = out.node().grad;
      auto& xn = x.node();
      auto& gn = gain.node();
      auto& bn = bias.node();
      for (std::size_t r = 0; r < rows; ++r) {
        Scalar mean_g = 0, mean_gx = 0;
        for (std::size_t j = 0; j < d; ++j) {
          const Scalar gx = g[r * d + j] * gn.value[j];
          mean_g += gx;
          mean_gx += gx * xhat[r * d + j];
          if (gn.requires_grad) gn.grad[j] += g[r * d + j] * xhat[r * d + j];
          if (bn.requires_grad) bn.grad[j] += g[r * d + j];
        }
        if (!xn.requires_grad) continue;
        mean_g /= static_cast<Scalar>(d);
        mean_gx /= static_cast<Scalar>(d);
        for (std::size_t j = 0; j < d; ++j) {
          const Scalar gx = g[r * d + j] * gn.value[j];
          xn.grad[r * d + j] += inv_std[r] * (gx - mean_g - xhat[r * d + j] * mean_gx);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// KL(N(mu, exp(log_var)) || N(0, I)) in closed form.
inline Tensor kl_diag_gaussian(Tape& tape, const Tensor& mu, const Tensor& log_var) {
  detail::require_same_shape("kl_diag_gaussian", mu, log_var);
  const bool grad = detail::any_grad(tape, {&mu, &log_var});
  Tensor out = detail::make_result({}, grad);
  Scalar acc = 0;
  for (std::size_t i = 0; i < mu.numel(); ++i) {
    acc += std::exp(log_var[i]) + mu[i] * mu[i] - Scalar(1) - log_var[i];
  }
  out.values()[0] = Scalar(0.5) * acc;
  if (grad) {
    tape.record([mu, log_var, out]() {
      const Scalar g = out.node().grad[0];
      auto& mn = mu.node();
      auto& ln = log_var.node();
      for (std::size_t i = 0; i < mn.value.size(); ++i) {
        if (mn.requires_grad) mn.grad[i] += g * mn.value[i];
        if (ln.requires_grad) ln.grad[i] += g * Scalar(0.5) * (std::exp(ln.value[i]) - Scalar(1));
      }
    });
  }
  return out;
}

/// Mean over rows of -log softmax(logits)[target]. Zero rows give a zero loss.
inline Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::size_t> targets) {
  detail::require_matrix("cross_entropy", logits);
  const std::size_t n = logits.dim(0), v = logits.dim(1);
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         shape_str(logits.shape()));
  }
  for (std::size_t t : targets) {
    if (t >= v) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(v));
    }
  }
  if (n == 0) return Tensor::scalar(0);
  const Tensor logp = log_softmax(tape, logits, -1);
  const bool grad = detail::any_grad(tape, {&logp});
  Tensor out = detail::make_result({}, grad);
  Scalar acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc -= logp[i * v + targets[i]];
  out.values()[0] = acc / static_cast<Scalar>(n);
  if (grad) {
    std::vector<std::size_t> tg(targets.begin(), targets.end());
    tape.record([logp, out, tg = std::move(tg), n, v]() {
      const Scalar g = out.node().grad[0] / static_cast<Scalar>(n);
      auto& ln = logp.node();
      for (std::size_t i = 0; i < n; ++i) ln.grad[i * v + tg[i]] -= g;
    });
  }
  return out;
}

inline constexpr Scalar kBceClamp = Scalar(1e-7);

/// Mean binary cross-entropy; scores are clamped into [1e-7, 1 - 1e-7].
inline Tensor binary_cross_entropy(Tape& tape, const Tensor& scores, std::span<const Scalar> labels) {
  if (labels.size() != scores.numel()) {
    throw DimensionError("binary_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         shape_str(scores.shape()));
  }
  const std::size_t n = scores.numel();
  if (n == 0) return Tensor::scalar(0);
  const bool grad = detail::any_grad(tape, {&scores});
  Tensor out = detail::make_result({}, grad);
  Scalar acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Scalar s = std::clamp(scores[i], kBceClamp, Scalar(1) - kBceClamp);
    acc -= labels[i] * std::log(s) + (Scalar(1) - labels[i]) * std::log(Scalar(1) - s);
  }
  out.values()[0] = acc / static_cast<Scalar>(n);
  if (grad) {
    std::vector<Scalar> y(labels.begin(), labels.end());
    tape.record([scores, out, y = std::move(y), n]() {
      const Scalar g = out.node().grad[0] / static_cast<Scalar>(n);
      auto& sn = scores.node();
      for (std::size_t i = 0; i < n; ++i) {
        const Scalar s = sn.value[i];
        if (s < kBceClamp || s > Scalar(1) - kBceClamp) continue;
        sn.grad[i] += g * (-y[i] / s + (Scalar(1) - y[i]) / (Scalar(1) - s));
      }
    });
  }
  return out;
}

}  // namespace coherent_ed
