#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lossforge/tensor.hpp"

using namespace lossforge;

namespace {

Tensor4 random_tensor(Dims d, std::mt19937_64& rng, double lo = -3.0, double hi = 3.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor4 t(d);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

Dims random_dims(std::mt19937_64& rng, int max_extent = 6) {
  std::uniform_int_distribution<int> ext(1, max_extent);
  return Dims{ext(rng), ext(rng), ext(rng), ext(rng)};
}

// Reference oracles: direct scalar re-implementations kept independent of the
// library loops (no *_into reuse, no shared helpers beyond std::).

double oracle_sign(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

double oracle_unary(UnaryOp op, double x) {
  switch (op) {
    case UnaryOp::Neg: return -x;
    case UnaryOp::Abs: return x < 0 ? -x : x;
    case UnaryOp::Inv: return 1.0 / (x + 1e-12);
    case UnaryOp::Log: return oracle_sign(x) * std::log(std::fabs(x) + 1e-12);
    case UnaryOp::Exp: return std::exp(x);
    case UnaryOp::Tanh: return std::tanh(x);
    case UnaryOp::Square: return x * x;
    case UnaryOp::Sqrt: return oracle_sign(x) * std::sqrt(std::fabs(x) + 1e-12);
  }
  return 0.0;
}

Tensor4 oracle_pool(const Tensor4& t, PoolMode mode) {
  Dims d = t.dims();
  Tensor4 out(d);
  for (int n = 0; n < d.n; ++n)
    for (int c = 0; c < d.c; ++c)
      for (int h = 0; h < d.h; ++h)
        for (int w = 0; w < d.w; ++w) {
          bool first = true;
          double best = 0;
          for (int dh = -1; dh <= 1; ++dh)
            for (int dw = -1; dw <= 1; ++dw) {
              int hh = h + dh, ww = w + dw;
              if (hh < 0 || hh >= d.h || ww < 0 || ww >= d.w) continue;
              double v = t.at(n, c, hh, ww);
              if (first || (mode == PoolMode::Max ? v > best : v < best)) best = v;
              first = false;
            }
          out.at(n, c, h, w) = best;
        }
  return out;
}

Tensor4 oracle_aggregate(const Tensor4& t, AggregateMode mode) {
  Dims d = t.dims();
  Tensor4 out(d);
  if (mode == AggregateMode::MeanNHW) {
    for (int c = 0; c < d.c; ++c) {
      double s = 0;
      int count = 0;
      for (int n = 0; n < d.n; ++n)
        for (int h = 0; h < d.h; ++h)
          for (int w = 0; w < d.w; ++w) {
            s += t.at(n, c, h, w);
            ++count;
          }
      for (int n = 0; n < d.n; ++n)
        for (int h = 0; h < d.h; ++h)
          for (int w = 0; w < d.w; ++w) out.at(n, c, h, w) = s / count;
    }
  } else {
    for (int n = 0; n < d.n; ++n)
      for (int h = 0; h < d.h; ++h)
        for (int w = 0; w < d.w; ++w) {
          double s = 0;
          for (int c = 0; c < d.c; ++c) s += t.at(n, c, h, w);
          for (int c = 0; c < d.c; ++c) out.at(n, c, h, w) = s / d.c;
        }
  }
  return out;
}

constexpr UnaryOp kUnaryOps[] = {UnaryOp::Neg, UnaryOp::Abs,    UnaryOp::Inv,
                                 UnaryOp::Log, UnaryOp::Exp,    UnaryOp::Tanh,
                                 UnaryOp::Square, UnaryOp::Sqrt};

}  // namespace

TEST(Tensor, InvOnOnes) {
  Tensor4 t = Tensor4::ones({1, 1, 1, 1});
  Tensor4 r = map_unary(t, UnaryOp::Inv);
  EXPECT_DOUBLE_EQ(r[0], 1.0 / (1.0 + 1e-12));
}

TEST(Tensor, LogOnZerosIsZero) {
  Tensor4 t = Tensor4::zeros({2, 3, 2, 2});
  Tensor4 r = map_unary(t, UnaryOp::Log);
  for (std::int64_t i = 0; i < r.size(); ++i) EXPECT_EQ(r[i], 0.0);
}

TEST(Tensor, SqrtOfNegativeFour) {
  Tensor4 t({1, 1, 1, 1}, {-4.0});
  Tensor4 r = map_unary(t, UnaryOp::Sqrt);
  EXPECT_NEAR(r[0], -2.0, 1e-9);
}

TEST(Tensor, InvAtZero) {
  Tensor4 t = Tensor4::zeros({1, 1, 1, 1});
  Tensor4 r = map_unary(t, UnaryOp::Inv);
  EXPECT_DOUBLE_EQ(r[0], 1.0 / 1e-12);
}

TEST(Tensor, ExpOverflowPropagates) {
  Tensor4 t({1, 1, 1, 1}, {1e9});
  Tensor4 r = map_unary(t, UnaryOp::Exp);
  EXPECT_TRUE(std::isinf(r[0]));
  EXPECT_FALSE(r.all_finite());
}

TEST(Tensor, AddAndMulBasics) {
  Tensor4 a({1, 2, 1, 1}, {1.0, 2.0});
  Tensor4 b({1, 2, 1, 1}, {3.0, 4.0});
  Tensor4 s = map_binary(a, b, BinaryOp::Add);
  EXPECT_EQ(s[0], 4.0);
  EXPECT_EQ(s[1], 6.0);

  Tensor4 ones = Tensor4::ones(a.dims());
  EXPECT_EQ(map_binary(a, ones, BinaryOp::Mul), a);
}

TEST(Tensor, BinaryDimsMismatchThrows) {
  Tensor4 a({1, 2, 1, 1});
  Tensor4 b({1, 3, 1, 1});
  EXPECT_THROW(map_binary(a, b, BinaryOp::Add), std::invalid_argument);
}

TEST(Tensor, MaxPoolConstant) {
  Tensor4 t({2, 1, 4, 4}, 7.5);
  EXPECT_EQ(pool3x3(t, PoolMode::Max), t);
  EXPECT_EQ(pool3x3(t, PoolMode::Min), t);
}

TEST(Tensor, MaxPoolSinglePeakFloods3x3) {
  Tensor4 t = Tensor4::zeros({1, 1, 3, 3});
  t.at(0, 0, 1, 1) = 5.0;
  Tensor4 r = pool3x3(t, PoolMode::Max);
  for (std::int64_t i = 0; i < r.size(); ++i) EXPECT_EQ(r[i], 5.0);
}

TEST(Tensor, MinPoolMatchesBruteForce) {
  std::mt19937_64 rng(41);
  Tensor4 t = random_tensor({1, 1, 4, 4}, rng);
  EXPECT_EQ(pool3x3(t, PoolMode::Min), oracle_pool(t, PoolMode::Min));
}

TEST(Tensor, MeanCTwoChannels) {
  Tensor4 t({1, 2, 1, 1}, {2.0, 4.0});
  Tensor4 r = aggregate(t, AggregateMode::MeanC);
  EXPECT_EQ(r[0], 3.0);
  EXPECT_EQ(r[1], 3.0);
}

TEST(Tensor, MeanNHWConstantIsIdentity) {
  Tensor4 t({2, 3, 2, 2}, 0.25);
  EXPECT_EQ(aggregate(t, AggregateMode::MeanNHW), t);
}

TEST(Tensor, MeanNHWAllElementsEqualMean) {
  std::mt19937_64 rng(7);
  Tensor4 t = random_tensor({2, 1, 2, 2}, rng);
  double mean = t.sum() / 8.0;
  Tensor4 r = aggregate(t, AggregateMode::MeanNHW);
  for (std::int64_t i = 0; i < r.size(); ++i) EXPECT_NEAR(r[i], mean, 1e-12);
}

// Each op matches the independent scalar oracle on 100 random tensors, and
// output dims always equal input dims.
TEST(Tensor, OracleEquivalenceAndShapePreservation) {
  std::mt19937_64 rng(12345);
  for (int trial = 0; trial < 100; ++trial) {
    Dims d = random_dims(rng);
    Tensor4 a = random_tensor(d, rng);
    Tensor4 b = random_tensor(d, rng);

    for (UnaryOp op : kUnaryOps) {
      Tensor4 r = map_unary(a, op);
      ASSERT_EQ(r.dims(), d);
      for (std::int64_t i = 0; i < r.size(); ++i) ASSERT_EQ(r[i], oracle_unary(op, a[i]));
    }
    for (BinaryOp op : {BinaryOp::Add, BinaryOp::Mul}) {
      Tensor4 r = map_binary(a, b, op);
      ASSERT_EQ(r.dims(), d);
      for (std::int64_t i = 0; i < r.size(); ++i)
        ASSERT_EQ(r[i], op == BinaryOp::Add ? a[i] + b[i] : a[i] * b[i]);
    }
    for (PoolMode m : {PoolMode::Max, PoolMode::Min}) {
      Tensor4 r = pool3x3(a, m);
      ASSERT_EQ(r.dims(), d);
      ASSERT_EQ(r, oracle_pool(a, m));
    }
    for (AggregateMode m : {AggregateMode::MeanNHW, AggregateMode::MeanC}) {
      Tensor4 r = aggregate(a, m);
      ASSERT_EQ(r.dims(), d);
      Tensor4 o = oracle_aggregate(a, m);
      for (std::int64_t i = 0; i < r.size(); ++i) ASSERT_NEAR(r[i], o[i], 1e-12);
    }
  }
}

TEST(Tensor, Determinism) {
  std::mt19937_64 rng(99);
  Tensor4 t = random_tensor({3, 2, 5, 4}, rng);
  EXPECT_EQ(map_unary(t, UnaryOp::Tanh), map_unary(t, UnaryOp::Tanh));
  EXPECT_EQ(pool3x3(t, PoolMode::Max), pool3x3(t, PoolMode::Max));
  EXPECT_EQ(aggregate(t, AggregateMode::MeanC), aggregate(t, AggregateMode::MeanC));
}

TEST(Tensor, PoolBackwardRoutesToSelectedElement) {
  // 2x2 plane, distinct values: every window's max is the global max at (1,1).
  Tensor4 t({1, 1, 2, 2}, {0.0, 1.0, 2.0, 3.0});
  Tensor4 up = Tensor4::ones(t.dims());
  Tensor4 grad = Tensor4::zeros(t.dims());
  pool3x3_backward_into(t, PoolMode::Max, up, grad);
  EXPECT_EQ(grad.at(0, 0, 1, 1), 4.0);
  EXPECT_EQ(grad.at(0, 0, 0, 0), 0.0);
}

TEST(Tensor, PoolBackwardTieBreaksFirstRowMajor) {
  Tensor4 t = Tensor4::zeros({1, 1, 2, 2});
  Tensor4 up = Tensor4::ones(t.dims());
  Tensor4 grad = Tensor4::zeros(t.dims());
  pool3x3_backward_into(t, PoolMode::Max, up, grad);
  // All values tie; each window routes to its top-left cell, which is (0,0)
  // for every window on a 2x2 plane.
  EXPECT_EQ(grad.at(0, 0, 0, 0), 4.0);
  EXPECT_EQ(grad.at(0, 0, 0, 1), 0.0);
}
