#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>

#include "dpfl/errors.hpp"
#include "dpfl/rng.hpp"
#include "dpfl/tape.hpp"
#include "dpfl/tensor.hpp"
#include "test_util.hpp"

namespace dpfl {
namespace {

using testing::Mat;
using testing::naive_matmul;
using testing::random_tensor;
using testing::to_mat;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  auto i2 = Tensor<float>::matrix({{1, 0}, {0, 1}});
  auto m = Tensor<float>::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul(i2, m), m);
}

TEST(Matmul, ProjectionRow) {
  auto p = Tensor<float>::matrix({{1, 0}, {0, 0}});
  auto v = Tensor<float>::matrix({{5}, {7}});
  EXPECT_EQ(matmul(p, v), Tensor<float>::matrix({{5}, {0}}));
}

TEST(Matmul, MatchesTripleLoopOracle) {
  RngStream rng(11, 0);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_tensor<double>(rng, {3, 4});
    auto b = random_tensor<double>(rng, {4, 2});
    const Mat ref = naive_matmul(to_mat(a), to_mat(b));
    EXPECT_LT(testing::max_abs_diff(matmul(a, b), ref), 1e-6);
    auto bt = random_tensor<double>(rng, {2, 4});
    EXPECT_LT(testing::max_abs_diff(matmul_nt(a, bt), naive_matmul(to_mat(a), testing::transpose(to_mat(bt)))),
              1e-12);
  }
}

TEST(Matmul, InnerExtentMismatchIsDimensionError) {
  Tensor<float> a(Shape{2, 3}), b(Shape{2, 3});
  EXPECT_THROW(matmul(a, b), DimensionError);
}

TEST(Softmax, SymmetricInputIsUniform) {
  auto s = softmax_rows(Tensor<double>::matrix({{0, 0}}));
  EXPECT_DOUBLE_EQ(s(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(s(0, 1), 0.5);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  auto s = softmax_rows(Tensor<double>::matrix({{1000, 0}}));
  EXPECT_NEAR(s(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(s(0, 1), 0.0, 1e-12);
}

TEST(Softmax, MatchesDirectEvaluation) {
  auto s = softmax_rows(Tensor<double>::matrix({{1, 2, 3}}));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(s(0, i), std::exp(i + 1.0) / z, 1e-7);
}

TEST(Softmax, RowsSumToOneOnRandomInputs) {
  RngStream rng(3, 0);
  for (int trial = 0; trial < 200; ++trial) {
    auto x = random_tensor<float>(rng, {4, 7}, 50.0);
    auto s = softmax_rows(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        EXPECT_GE(s(r, c), 0.0f);
        sum += s(r, c);
      }
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, NonFiniteInputIsRejected) {
  auto x = Tensor<double>::matrix({{1, std::nan("")}});
  EXPECT_THROW(softmax_rows(x), NumericError);
}

TEST(L2Norm, Examples) {
  EXPECT_DOUBLE_EQ(l2_norm(Tensor<float>::vector({3, 4})), 5.0);
  EXPECT_DOUBLE_EQ(l2_norm(Tensor<float>(Shape{10})), 0.0);
}

TEST(L2Norm, MatchesDirectSummationAndIsHomogeneous) {
  RngStream rng(5, 0);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor<double>(rng, {100});
    double ss = 0.0;
    for (double v : x.values()) ss += v * v;
    EXPECT_LT(testing::rel_err(l2_norm(x), std::sqrt(ss)), 1e-6);
    const double c = 10.0 * (rng.uniform() - 0.5);
    Tensor<double> cx = x;
    for (auto& v : cx.values()) v *= c;
    EXPECT_NEAR(l2_norm(cx), std::abs(c) * l2_norm(x), 1e-6);
  }
}

TEST(Tensor, ShapeMustMatchElementCount) {
  EXPECT_THROW(Tensor<float>(Shape{2, 3}, std::vector<float>(5)), DimensionError);
}

TEST(Gaussian, ZeroStddevGivesZeros) {
  RngStream rng(1, 0);
  auto t = gaussian_sample<double>(rng, {5, 5}, 0.0);
  for (double v : t.values()) EXPECT_EQ(v, 0.0);
}

TEST(Gaussian, SameSeedSameTensor) {
  RngStream a(42, 7), b(42, 7);
  EXPECT_EQ(gaussian_sample<float>(a, {8, 8}, 1.5), gaussian_sample<float>(b, {8, 8}, 1.5));
}

TEST(Gaussian, NegativeStddevIsParameterError) {
  RngStream rng(1, 0);
  EXPECT_THROW(gaussian_sample<float>(rng, {2}, -1.0), ParameterError);
}

TEST(Gaussian, MomentsOfAMillionDraws) {
  RngStream rng(2024, 0);
  auto t = gaussian_sample<double>(rng, {1000000}, 2.0);
  double mean = 0.0;
  for (double v : t.values()) mean += v;
  mean /= static_cast<double>(t.size());
  double var = 0.0;
  for (double v : t.values()) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(t.size() - 1));
  EXPECT_NEAR(mean, 0.0, 0.01);
  EXPECT_NEAR(sd, 2.0, 0.02);
}

TEST(Rng, IdenticalSeedAndCallsGiveIdenticalSequences) {
  RngState a(99), b(99);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(a.stream(Stream::kNoise).next_u64(), b.stream(Stream::kNoise).next_u64());
  }
}

TEST(Rng, StreamsAreIndependent) {
  RngState a(99), b(99);
  for (int i = 0; i < 500; ++i) b.stream(Stream::kSampling).next_u64();
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(a.stream(Stream::kNoise).next_u64(), b.stream(Stream::kNoise).next_u64());
  }
}

TEST(Rng, BelowStaysInRange) {
  RngStream rng(4, 1);
  for (int i = 0; i < 10000; ++i) EXPECT_LT(rng.below(7), 7u);
}

TEST(Tape, SumGivesOnesGradient) {
  Tensor<double> x = Tensor<double>::matrix({{1, -2, 3}});
  x.set_trainable(true);
  Tape<double> tape;
  auto loss = tape.sum(tape.bind(x));
  tape.backward(loss);
  ASSERT_TRUE(x.has_grad());
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Tape, HalfSquaredNormGivesXAsGradient) {
  Tensor<double> x = Tensor<double>::matrix({{0.5, -2, 3, 7}});
  x.set_trainable(true);
  Tape<double> tape;
  auto v = tape.bind(x);
  auto loss = tape.scale(tape.sum(tape.mul(v, v)), 0.5);
  tape.backward(loss);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], x[i]);
}

TEST(Tape, FrozenTensorsReceiveNoGradient) {
  Tensor<double> w = Tensor<double>::matrix({{1, 2}, {3, 4}});
  Tensor<double> x = Tensor<double>::matrix({{1, 1}});
  x.set_trainable(true);
  Tape<double> tape;
  auto loss = tape.sum(tape.matmul(tape.bind(x), tape.bind(w)));
  tape.backward(loss);
  EXPECT_TRUE(x.has_grad());
  EXPECT_FALSE(w.has_grad());
  EXPECT_EQ(tape.grad_of(w), nullptr);
}

TEST(Tape, BackwardVisitsOpsInReverseRecordingOrder) {
  Tensor<double> x = Tensor<double>::matrix({{1, 2}});
  x.set_trainable(true);
  Tape<double> tape;
  auto a = tape.scale(tape.leaf(x), 2.0);
  auto b = tape.mul(a, a);
  auto c = tape.sum(b);
  tape.backward(c);
  const auto& trace = tape.backward_trace();
  ASSERT_FALSE(trace.empty());
  for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_GT(trace[i - 1], trace[i]);
  EXPECT_EQ(trace.front(), c.index);
}

TEST(Tape, LossFromAnotherTapeIsUsageError) {
  Tensor<double> x = Tensor<double>::matrix({{1}});
  x.set_trainable(true);
  Tape<double> a, b;
  auto loss = a.sum(a.leaf(x));
  EXPECT_THROW(b.backward(loss), UsageError);
}

TEST(Tape, NonScalarLossIsUsageError) {
  Tensor<double> x = Tensor<double>::matrix({{1, 2}});
  x.set_trainable(true);
  Tape<double> tape;
  auto v = tape.leaf(x);
  EXPECT_THROW(tape.backward(v), UsageError);
}

// Central finite differences of a scalar function of one trainable tensor
// against the tape gradient, for each differentiable primitive.
class PrimitiveGradient : public ::testing::Test {
 protected:
  using Build = std::function<Tape<double>::Var(Tape<double>&, Tape<double>::Var)>;

  void check(Tensor<double> x, const Build& build) {
    x.set_trainable(true);
    Tape<double> tape;
    auto loss = build(tape, tape.leaf(x));
    tape.backward(loss);
    const std::vector<double> grad = *tape.grad_of(x);
    const double h = 1e-4;
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      Tensor<double> xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      Tape<double> tp, tm;
      const double fp = tp.value(build(tp, tp.leaf(xp))).item();
      const double fm = tm.value(build(tm, tm.leaf(xm))).item();
      worst = std::max(worst, testing::rel_err(grad[i], (fp - fm) / (2 * h)));
    }
    EXPECT_LT(worst, 1e-3);
  }

  // A fixed non-symmetric weighting so sum-type losses see distinct partials.
  Tape<double>::Var weighted(Tape<double>& t, Tape<double>::Var v) {
    const auto& val = t.value(v);
    Tensor<double> w(val.shape());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + 0.7 * static_cast<double>(i));
    return t.sum(t.mul(v, t.constant(std::move(w))));
  }

  RngStream rng{77, 0};
};

TEST_F(PrimitiveGradient, Matmul) {
  auto b = random_tensor<double>(rng, {4, 3});
  check(random_tensor<double>(rng, {2, 4}),
        [&](auto& t, auto x) { return weighted(t, t.matmul(x, t.constant(b))); });
  check(random_tensor<double>(rng, {4, 3}),
        [&](auto& t, auto x) { return weighted(t, t.matmul_nt(t.constant(b), x)); });
}

TEST_F(PrimitiveGradient, RmsnormInputAndGain) {
  auto g = random_tensor<double>(rng, {6});
  check(random_tensor<double>(rng, {3, 6}),
        [&](auto& t, auto x) { return weighted(t, t.rmsnorm_rows(x, t.constant(g), 1e-5)); });
  auto xin = random_tensor<double>(rng, {3, 6});
  check(g, [&](auto& t, auto gain) { return weighted(t, t.rmsnorm_rows(t.constant(xin), gain, 1e-5)); });
}

TEST_F(PrimitiveGradient, Swiglu) {
  auto up = random_tensor<double>(rng, {2, 5}, 2.0);
  check(random_tensor<double>(rng, {2, 5}, 2.0),
        [&](auto& t, auto x) { return weighted(t, t.swiglu(x, t.constant(up))); });
  auto gate = random_tensor<double>(rng, {2, 5}, 2.0);
  check(up, [&](auto& t, auto x) { return weighted(t, t.swiglu(t.constant(gate), x)); });
}

TEST_F(PrimitiveGradient, Rotary) {
  std::vector<std::size_t> pos{0, 3, 7};
  check(random_tensor<double>(rng, {3, 8}),
        [&](auto& t, auto x) { return weighted(t, t.rotary(x, 4, pos, 10000.0)); });
}

TEST_F(PrimitiveGradient, GroupedAttention) {
  auto k = random_tensor<double>(rng, {4, 4});
  auto v = random_tensor<double>(rng, {4, 4});
  check(random_tensor<double>(rng, {4, 8}), [&](auto& t, auto q) {
    return weighted(t, t.attention(q, t.constant(k), t.constant(v), 2, 1, true));
  });
  auto q = random_tensor<double>(rng, {4, 8});
  check(k, [&](auto& t, auto kk) {
    return weighted(t, t.attention(t.constant(q), kk, t.constant(v), 2, 1, true));
  });
  check(v, [&](auto& t, auto vv) {
    return weighted(t, t.attention(t.constant(q), t.constant(k), vv, 2, 1, true));
  });
}

TEST_F(PrimitiveGradient, EmbeddingSliceAndCrossEntropy) {
  std::vector<int> ids{2, 0, 2, 1};
  check(random_tensor<double>(rng, {3, 5}),
        [&](auto& t, auto table) { return weighted(t, t.slice_rows(t.embedding(table, ids), 1, 2)); });
  std::vector<int> targets{4, 0, 2};
  std::vector<std::uint8_t> mask{1, 0, 1};
  check(random_tensor<double>(rng, {3, 5}, 3.0),
        [&](auto& t, auto logits) { return t.cross_entropy(logits, targets, mask); });
}

TEST_F(PrimitiveGradient, AddMulScale) {
  auto c = random_tensor<double>(rng, {2, 3});
  check(random_tensor<double>(rng, {2, 3}), [&](auto& t, auto x) {
    return weighted(t, t.scale(t.add(t.mul(x, x), t.mul(x, t.constant(c))), 1.7));
  });
}

}  // namespace
}  // namespace dpfl
