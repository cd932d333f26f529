#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "coherent_ed/grad_check.hpp"
#include "coherent_ed/ops.hpp"
#include "coherent_ed/optim.hpp"
#include "coherent_ed/parameters.hpp"

using namespace coherent_ed;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Triple-loop reference product, independent of the tape implementation.
std::vector<double> reference_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += (long double)a.at(i, p) * b.at(p, j);
      c[i * n + j] = static_cast<double>(acc);
    }
  return c;
}

}  // namespace

// ---------------------------------------------------------------- matmul

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tape tape = Tape::no_grad();
  Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  Tensor m = Tensor::matrix(2, 2, {1, 2, 3, 4});
  Tensor out = matmul(tape, eye, m);
  EXPECT_EQ(out.to_vector(), m.to_vector());
}

TEST(Matmul, OneByOne) {
  Tape tape = Tape::no_grad();
  EXPECT_EQ(matmul(tape, Tensor::matrix(1, 1, {2}), Tensor::matrix(1, 1, {3})).item(), 6.0);
}

TEST(Matmul, MatchesTripleLoopReference) {
  Rng rng(11);
  Tensor a = random_tensor({4, 5}, rng);
  Tensor b = random_tensor({5, 3}, rng);
  Tape tape = Tape::no_grad();
  Tensor out = matmul(tape, a, b);
  const auto ref = reference_matmul(a, b);
  ASSERT_EQ(out.shape(), (Shape{4, 3}));
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out[i], ref[i], 1e-12);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape tape;
  try {
    matmul(tape, Tensor({2, 3}), Tensor({4, 2}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[4x2]"), std::string::npos);
  }
}

// ---------------------------------------------------------------- softmax

TEST(Softmax, UniformLogits) {
  Tape tape = Tape::no_grad();
  Tensor y = softmax(tape, Tensor::vector({0, 0, 0}));
  for (Scalar v : y.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftByLogTwoGivesOneThirdTwoThirds) {
  Tape tape = Tape::no_grad();
  const double c = 7.25;
  Tensor y = softmax(tape, Tensor::vector({c, c + std::log(2.0)}));
  EXPECT_NEAR(y[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(y[1], 2.0 / 3.0, 1e-15);
}

TEST(Softmax, MatchesExtendedPrecision) {
  Rng rng(5);
  Tensor x = random_tensor({6}, rng, -4, 4);
  Tape tape = Tape::no_grad();
  Tensor y = softmax(tape, x);
  long double total = 0;
  for (Scalar v : x.values()) total += std::exp((long double)v);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_NEAR(y[i], static_cast<double>(std::exp((long double)x[i]) / total), 1e-12);
  }
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({3, 7}, rng, -30, 30);
    Tensor shifted = x.clone();
    const double c = std::uniform_real_distribution<double>(-100, 100)(rng);
    for (auto& v : shifted.values()) v += c;
    Tape tape = Tape::no_grad();
    Tensor y = softmax(tape, x, 1);
    Tensor ys = softmax(tape, shifted, 1);
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < 7; ++j) s += y.at(r, j);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], ys[i], 1e-12);
  }
}

TEST(Softmax, NonLastAxis) {
  Tape tape = Tape::no_grad();
  Tensor x = Tensor::matrix(2, 2, {0, 5, 0, 5});
  Tensor y = softmax(tape, x, 0);
  EXPECT_NEAR(y.at(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(y.at(1, 1), 0.5, 1e-15);
}

// ---------------------------------------------------------------- sigmoid

TEST(Sigmoid, SymmetryPointAndSaturation) {
  Tape tape = Tape::no_grad();
  Tensor y = sigmoid(tape, Tensor::vector({0, 50, -50}));
  EXPECT_EQ(y[0], 0.5);
  EXPECT_NEAR(y[1], 1.0, 1e-12);
  EXPECT_LT(y[2], 1e-12);
  EXPECT_GT(y[2], 0.0);
}

TEST(Sigmoid, ComplementIdentity) {
  Rng rng(3);
  Tensor x = random_tensor({50}, rng, -20, 20);
  Tensor neg = x.clone();
  for (auto& v : neg.values()) v = -v;
  Tape tape = Tape::no_grad();
  Tensor a = sigmoid(tape, x), b = sigmoid(tape, neg);
  for (std::size_t i = 0; i < 50; ++i) EXPECT_NEAR(a[i] + b[i], 1.0, 1e-15);
}

// ---------------------------------------------------------------- layer_norm

TEST(LayerNorm, ConstantRowMapsToZero) {
  Tape tape = Tape::no_grad();
  Tensor y = layer_norm(tape, Tensor::matrix(1, 3, {5, 5, 5}), Tensor({3}, 1.0), Tensor({3}, 0.0));
  for (Scalar v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, OutputRowsHaveZeroMeanUnitVariance) {
  Rng rng(8);
  Tensor x = random_tensor({5, 9}, rng, -10, 10);
  Tape tape = Tape::no_grad();
  Tensor y = layer_norm(tape, x, Tensor({9}, 1.0), Tensor({9}, 0.0));
  for (std::size_t r = 0; r < 5; ++r) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < 9; ++j) mu += y.at(r, j);
    mu /= 9;
    for (std::size_t j = 0; j < 9; ++j) var += (y.at(r, j) - mu) * (y.at(r, j) - mu);
    EXPECT_LT(std::abs(mu), 1e-10);
    EXPECT_NEAR(var / 9, 1.0, 1e-3);
  }
}

// ---------------------------------------------------------------- KL

TEST(KlDiagGaussian, AnalyticCases) {
  Tape tape = Tape::no_grad();
  EXPECT_EQ(kl_diag_gaussian(tape, Tensor({4}, 0.0), Tensor({4}, 0.0)).item(), 0.0);
  EXPECT_NEAR(kl_diag_gaussian(tape, Tensor::vector({1.5}), Tensor::vector({0})).item(), 1.125, 1e-15);
}

TEST(KlDiagGaussian, MatchesMonteCarloEstimate) {
  Rng rng(2024);
  Tensor mu = random_tensor({4}, rng, -1, 1);
  Tensor lv = random_tensor({4}, rng, -1, 1);
  Tape tape = Tape::no_grad();
  const double kl = kl_diag_gaussian(tape, mu, lv).item();
  // E_q[log q(z) - log p(z)] with antithetic reparametrized draws.
  std::normal_distribution<double> n01;
  const int samples = 100000;
  long double acc = 0;
  for (int s = 0; s < samples / 2; ++s) {
    std::array<double, 4> eps;
    for (auto& e : eps) e = n01(rng);
    for (double sign : {1.0, -1.0}) {
      long double term = 0;
      for (int i = 0; i < 4; ++i) {
        const double sd = std::exp(0.5 * lv[i]);
        const double z = mu[i] + sd * sign * eps[i];
        const double logq = -0.5 * std::log(2 * M_PI) - 0.5 * lv[i] - 0.5 * eps[i] * eps[i];
        const double logp = -0.5 * std::log(2 * M_PI) - 0.5 * z * z;
        term += logq - logp;
      }
      acc += term;
    }
  }
  const double mc = static_cast<double>(acc / samples);
  EXPECT_LT(std::abs(mc - kl) / kl, 0.01) << "closed form " << kl << " vs MC " << mc;
}

TEST(KlDiagGaussian, NonNegativeAndZeroOnlyAtPrior) {
  Rng rng(41);
  Tape tape = Tape::no_grad();
  for (int t = 0; t < 200; ++t) {
    Tensor mu = random_tensor({6}, rng, -3, 3);
    Tensor lv = random_tensor({6}, rng, -5, 5);
    EXPECT_GT(kl_diag_gaussian(tape, mu, lv).item(), 0.0);
  }
}

// ---------------------------------------------------------------- cross entropy

TEST(CrossEntropy, ConfidentCorrectIsNearZero) {
  Tape tape = Tape::no_grad();
  Tensor logits = Tensor::matrix(2, 3, {1e6, 0, 0, 0, 0, 1e6});
  const std::vector<std::size_t> targets{0, 2};
  EXPECT_LT(cross_entropy(tape, logits, targets).item(), 1e-6);
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
  Tape tape = Tape::no_grad();
  const std::vector<std::size_t> targets{1};
  EXPECT_NEAR(cross_entropy(tape, Tensor({1, 4}, 0.3), targets).item(), std::log(4.0), 1e-15);
}

TEST(CrossEntropy, MatchesHighPrecisionLogSumExp) {
  Rng rng(9);
  Tensor logits = random_tensor({3, 5}, rng, -3, 3);
  const std::vector<std::size_t> targets{4, 0, 2};
  Tape tape = Tape::no_grad();
  const double got = cross_entropy(tape, logits, targets).item();
  long double expect = 0;
  for (std::size_t r = 0; r < 3; ++r) {
    long double s = 0;
    for (std::size_t j = 0; j < 5; ++j) s += std::exp((long double)logits.at(r, j));
    expect += std::log(s) - logits.at(r, targets[r]);
  }
  EXPECT_NEAR(got, static_cast<double>(expect / 3), 1e-10);
}

TEST(CrossEntropy, OutOfRangeTargetIsIndexError) {
  Tape tape;
  const std::vector<std::size_t> targets{5};
  EXPECT_THROW(cross_entropy(tape, Tensor({1, 5}), targets), IndexError);
}

// ---------------------------------------------------------------- BCE

TEST(BinaryCrossEntropy, HalfEverywhereIsLogTwo) {
  Tape tape = Tape::no_grad();
  const std::vector<Scalar> labels{1, 0, 1, 1};
  EXPECT_NEAR(binary_cross_entropy(tape, Tensor({4}, 0.5), labels).item(), std::log(2.0), 1e-15);
}

TEST(BinaryCrossEntropy, PerfectScoresHitClampBoundary) {
  Tape tape = Tape::no_grad();
  const std::vector<Scalar> labels{1, 0};
  const double got = binary_cross_entropy(tape, Tensor::vector({1, 0}), labels).item();
  EXPECT_NEAR(got, -std::log(1 - 1e-7), 1e-12);
}

TEST(BinaryCrossEntropy, MatchesDirectSum) {
  Rng rng(12);
  Tensor s = random_tensor({8}, rng, 0.01, 0.99);
  std::vector<Scalar> y(8);
  for (std::size_t i = 0; i < 8; ++i) y[i] = (i * 5 + 1) % 3 == 0 ? 1 : 0;
  Tape tape = Tape::no_grad();
  long double expect = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    expect -= y[i] * std::log((long double)s[i]) + (1 - y[i]) * std::log(1 - (long double)s[i]);
  }
  EXPECT_NEAR(binary_cross_entropy(tape, s, y).item(), static_cast<double>(expect / 8), 1e-10);
}

// ---------------------------------------------------------------- backward

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::vector({1, 2, 3});
  x.set_requires_grad(true);
  Tape tape;
  Tensor loss = sum(tape, x);
  backward(loss, tape);
  for (Scalar g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwoX) {
  Tensor x = Tensor::vector({1, 2, 3});
  x.set_requires_grad(true);
  Tape tape;
  backward(sum(tape, mul(tape, x, x)), tape);
  EXPECT_EQ(x.to_vector().size(), 3u);
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], 4.0);
  EXPECT_EQ(x.grad()[2], 6.0);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tensor x = Tensor::vector({1, 2});
  x.set_requires_grad(true);
  Tape tape;
  Tensor y = scale(tape, x, 2);
  EXPECT_THROW(backward(y, tape), ContractError);
}

TEST(Backward, CompositeMatchesFiniteDifferences) {
  Rng rng(77);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor w = random_tensor({4, 2}, rng);
  const std::vector<Scalar> labels{1, 0, 0, 1, 1, 0};
  auto f = [&](Tape& t) { return binary_cross_entropy(t, sigmoid(t, matmul(t, a, w)), labels); };
  EXPECT_LT(grad_check(f, {a, w}), 1e-4);
}

TEST(Backward, SharedLeafAccumulatesBranchGradients) {
  Rng rng(5);
  Tensor x = random_tensor({5}, rng);
  auto branch1 = [&](Tape& t) { return sum(t, exp(t, x)); };
  auto branch2 = [&](Tape& t) { return sum(t, sigmoid(t, x)); };
  auto grads_of = [&](auto f) {
    x.set_requires_grad(true);
    x.zero_grad();
    Tape t;
    backward(f(t), t);
    return std::vector<Scalar>(x.grad().begin(), x.grad().end());
  };
  const auto g1 = grads_of(branch1);
  const auto g2 = grads_of(branch2);
  const auto both = grads_of([&](Tape& t) { return add(t, branch1(t), branch2(t)); });
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(both[i], g1[i] + g2[i], 1e-14);
}

TEST(Backward, LeafGradsAccumulateUntilZeroed) {
  Tensor x = Tensor::vector({1, 2});
  x.set_requires_grad(true);
  for (int i = 0; i < 2; ++i) {
    Tape t;
    backward(sum(t, x), t);
  }
  EXPECT_EQ(x.grad()[0], 2.0);
  x.zero_grad();
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Backward, TapeVisitsEachOpOnce) {
  Tensor x = Tensor::vector({1, 2});
  x.set_requires_grad(true);
  Tape t;
  Tensor y = scale(t, x, 3);
  Tensor z = sum(t, y);
  EXPECT_EQ(t.size(), 2u);
  backward(z, t);
  EXPECT_EQ(t.size(), 0u);
  EXPECT_EQ(x.grad()[0], 3.0);
}

// ---------------------------------------------------------------- grad_check

TEST(GradCheck, LinearFunctionIsExact) {
  Rng rng(1);
  Tensor x = random_tensor({6}, rng);
  Tensor w = random_tensor({6}, rng);
  auto f = [&](Tape& t) { return sum(t, mul(t, x, w.detach())); };
  EXPECT_LT(grad_check(f, {x}), 1e-10);
}

TEST(GradCheck, EveryPrimitiveOnTenSeeds) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 5}, rng);
    Tensor v = random_tensor({3, 4}, rng);
    Tensor gain = random_tensor({4}, rng, 0.5, 1.5);
    Tensor bias = random_tensor({4}, rng);
    Tensor mu = random_tensor({6}, rng);
    Tensor lv = random_tensor({6}, rng);
    Tensor probs = random_tensor({3, 4}, rng, 0.05, 0.95);
    Tensor weights = random_tensor({3, 5}, rng);
    const std::vector<std::size_t> targets{1, 4, 0};
    const std::vector<Scalar> labels{1, 0, 1, 0, 0, 1, 1, 1, 0, 0, 1, 0};
    auto weighted = [&](Tape& t, const Tensor& y) { return sum(t, mul(t, y, weights.detach())); };
    auto weighted4 = [&](Tape& t, const Tensor& y) {
      Tensor w4 = Tensor::matrix(3, 4, std::vector<Scalar>(weights.values().begin(), weights.values().begin() + 12));
      return sum(t, mul(t, y, w4));
    };

    EXPECT_LT(grad_check([&](Tape& t) { return weighted(t, matmul(t, a, b)); }, {a, b}), 1e-4) << seed;
    EXPECT_LT(grad_check([&](Tape& t) { return weighted(t, softmax(t, matmul(t, a, b), 1)); }, {a, b}), 1e-4) << seed;
    EXPECT_LT(grad_check([&](Tape& t) { return weighted4(t, softmax(t, v, 0)); }, {v}), 1e-4) << seed;
    EXPECT_LT(grad_check([&](Tape& t) { return weighted4(t, log_softmax(t, v, 1)); }, {v}), 1e-4) << seed;
    EXPECT_LT(grad_check([&](Tape& t) { return weighted4(t, sigmoid(t, v)); }, {v}), 1e-4) << seed;
    EXPECT_LT(grad_check([&](Tape& t) { return weighted4(t, gelu(t, v)); }, {v}), 1e-4) << seed;
    EXPECT_LT(grad_check([&](Tape& t) { return weighted4(t, tanh(t, v)); }, {v}), 1e-4) << seed;
    EXPECT_LT(grad_check([&](Tape& t) { return weighted4(t, exp(t, v)); }, {v}), 1e-4) << seed;
    EXPECT_LT(grad_check([&](Tape& t) { return weighted4(t, log(t, probs)); }, {probs}), 1e-4) << seed;
    EXPECT_LT(grad_check([&](Tape& t) { return weighted4(t, layer_norm(t, v, gain, bias)); }, {v, gain, bias}), 1e-4) << seed;
    EXPECT_LT(grad_check([&](Tape& t) { return kl_diag_gaussian(t, mu, lv); }, {mu, lv}), 1e-4) << seed;
    EXPECT_LT(grad_check([&](Tape& t) { return cross_entropy(t, matmul(t, a, b), targets); }, {a, b}), 1e-4) << seed;
    EXPECT_LT(grad_check([&](Tape& t) { return binary_cross_entropy(t, probs, labels); }, {probs}), 1e-4) << seed;
    EXPECT_LT(grad_check([&](Tape& t) { return weighted4(t, transpose(t, transpose(t, v))); }, {v}), 1e-4) << seed;
  }
}

TEST(GradCheck, StructuralOpsOnTenSeeds) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    Tensor table = random_tensor({5, 3}, rng);
    Tensor a = random_tensor({4, 3}, rng);
    Tensor b = random_tensor({4, 3}, rng);
    Tensor bias = random_tensor({3}, rng);
    Tensor w = random_tensor({8, 3}, rng);
    const std::vector<std::size_t> ids{4, 0, 4, 2};
    const std::vector<std::uint8_t> keep{1, 0, 0, 1};
    auto f = [&](Tape& t) {
      Tensor g = gather_rows(t, table, ids);
      Tensor s = select_rows(t, keep, add(t, g, bias), sub(t, a, b));
      Tensor cat = concat_rows(t, {s, slice_rows(t, a, 1, 2), slice_rows(t, b, 0, 2)});
      Tensor cc = concat_cols(t, {slice_cols(t, cat, 0, 2), slice_cols(t, cat, 2, 1)});
      Tensor r = reshape(t, cc, {24});
      Tensor wr = reshape(t, w.detach(), {24});
      return mean(t, mul(t, r, wr));
    };
    EXPECT_LT(grad_check(f, {table, a, b, bias}), 1e-4) << seed;
  }
}

TEST(GradCheck, WrongBackwardRuleIsDetected) {
  // Squaring op whose backward rule forgets the factor of two.
  auto bad_square = [](Tape& tape, const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out.values()[i] = x[i] * x[i];
    if (tape.recording() && x.requires_grad()) {
      out.set_requires_grad(true);
      tape.record([x, out]() {
        for (std::size_t i = 0; i < x.numel(); ++i) x.node().grad[i] += out.node().grad[i] * x[i];
      });
    }
    return out;
  };
  Rng rng(4);
  Tensor x = random_tensor({5}, rng, 0.5, 2);
  EXPECT_GT(grad_check([&](Tape& t) { return sum(t, bad_square(t, x)); }, {x}), 1e-2);
}

// ---------------------------------------------------------------- misc

TEST(Determinism, ForwardOpsAreBitwiseRepeatable) {
  Rng rng(99);
  Tensor a = random_tensor({6, 6}, rng);
  auto run = [&]() {
    Tape t = Tape::no_grad();
    return layer_norm(t, softmax(t, matmul(t, a, a), 1), Tensor({6}, 1.0), Tensor({6}, 0.0)).to_vector();
  };
  EXPECT_EQ(run(), run());
}

TEST(Dropout, EvalModeIsIdentityAndTrainingScales) {
  Rng rng(1);
  Tensor x({1000}, 1.0);
  Tape t = Tape::no_grad();
  EXPECT_TRUE(dropout(t, x, 0.1, &rng, false).same_storage(x));
  Tensor y = dropout(t, x, 0.5, &rng, true);
  std::size_t zeros = 0;
  for (Scalar v : y.values()) {
    if (v == 0) ++zeros;
    else EXPECT_DOUBLE_EQ(v, 2.0);
  }
  EXPECT_GT(zeros, 400u);
  EXPECT_LT(zeros, 600u);
}

TEST(Optim, ClippingBoundsGlobalNorm) {
  ParameterStore store;
  Tensor p = store.add("w", Tensor({3}, 0.0));
  p.grad()[0] = 3;
  p.grad()[1] = 4;
  const double before = clip_grad_norm(store, 1.0);
  EXPECT_DOUBLE_EQ(before, 5.0);
  EXPECT_LE(global_grad_norm(store), 1.0 + 1e-6);
}

TEST(Optim, WarmupDecayShape) {
  WarmupDecaySchedule s{1.0, 4, 12};
  EXPECT_DOUBLE_EQ(s.at(0), 0.25);
  EXPECT_DOUBLE_EQ(s.at(3), 1.0);
  EXPECT_DOUBLE_EQ(s.at(4), 1.0);
  EXPECT_DOUBLE_EQ(s.at(8), 0.5);
  EXPECT_DOUBLE_EQ(s.at(12), 0.0);
}

TEST(Optim, AdamWDescendsQuadratic) {
  ParameterStore store;
  Tensor w = store.add("w", Tensor::matrix(1, 2, {3, -2}));
  AdamW opt;
  for (int i = 0; i < 500; ++i) {
    store.zero_grad();
    Tape t;
    backward(sum(t, mul(t, w, w)), t);
    opt.step(store, 0.05);
  }
  EXPECT_LT(std::abs(w[0]), 0.05);
  EXPECT_LT(std::abs(w[1]), 0.05);
}

TEST(Checkpoint, RoundTripAndTruncation) {
  Rng rng(3);
  ParameterStore store;
  store.add("layer.w", random_tensor({3, 4}, rng));
  store.add("layer.b", random_tensor({4}, rng));
  const auto dir = std::filesystem::temp_directory_path() / "coherent_ed_ckpt_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "params.bin").string();
  write_tensors(path, store);

  ParameterStore other;
  other.add("layer.w", Tensor({3, 4}));
  other.add("layer.b", Tensor({4}));
  load_into(path, other);
  EXPECT_EQ(other.get("layer.w").to_vector(), store.get("layer.w").to_vector());
  EXPECT_EQ(other.get("layer.b").to_vector(), store.get("layer.b").to_vector());

  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 5);
  try {
    read_tensors(path);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
  }

  ParameterStore wrong;
  wrong.add("layer.w", Tensor({4, 3}));
  write_tensors(path, store);
  EXPECT_THROW(load_into(path, wrong), LoadError);
}
