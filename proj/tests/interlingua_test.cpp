#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "imt/error.hpp"
#include "imt/gradcheck.hpp"
#include "imt/interlingua.hpp"
#include "imt/transformer.hpp"

using namespace imt;
using namespace imt::il;

namespace {

Tensor random_h(std::int64_t b, std::int64_t d, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  auto t = Tensor::uniform({b, d}, -1.0, 1.0, rng);
  t.set_requires_grad(grad);
  return t;
}

// Textbook two-pass Pearson per column, averaged.
double oracle_corr(const Tensor& x, const Tensor& y) {
  const auto b = x.dim(0), d = x.dim(1);
  double total = 0.0;
  for (std::int64_t k = 0; k < d; ++k) {
    long double mx = 0, my = 0;
    for (std::int64_t i = 0; i < b; ++i) {
      mx += x.at({i, k});
      my += y.at({i, k});
    }
    mx /= b;
    my /= b;
    long double cov = 0, vx = 0, vy = 0;
    for (std::int64_t i = 0; i < b; ++i) {
      cov += (x.at({i, k}) - mx) * (y.at({i, k}) - my);
      vx += (x.at({i, k}) - mx) * (x.at({i, k}) - mx);
      vy += (y.at({i, k}) - my) * (y.at({i, k}) - my);
    }
    total += static_cast<double>(cov / std::sqrt(vx * vy));
  }
  return total / static_cast<double>(d);
}

}  // namespace

TEST(Pool, HandMeansAndSingleton) {
  Tensor enc(Shape{2, 2, 2}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
  data::BoolMatrix mask(2, 2);
  mask << true, true, true, false;
  auto h = pool_representation(enc, mask, "x", 3);
  EXPECT_EQ(h.h.shape(), (Shape{2, 2}));
  EXPECT_DOUBLE_EQ(h.h.at({0, 0}), 2.0);
  EXPECT_DOUBLE_EQ(h.h.at({0, 1}), 3.0);
  EXPECT_DOUBLE_EQ(h.h.at({1, 0}), 5.0);
  EXPECT_DOUBLE_EQ(h.h.at({1, 1}), 6.0);
  EXPECT_EQ(h.language, "x");
  EXPECT_EQ(h.batch_id, 3);

  Tensor one(Shape{1, 1, 3}, std::vector<double>{0.1, -2, 7});
  auto p = pool_representation(one, data::BoolMatrix::Constant(1, 1, true));
  EXPECT_EQ(p.h.values()[1], -2.0);
}

TEST(Pool, EmptyRowThrows) {
  Tensor enc(Shape{2, 2, 1}, 1.0);
  data::BoolMatrix mask(2, 2);
  mask << true, false, false, false;
  try {
    pool_representation(enc, mask);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyRow);
  }
}

TEST(Pool, PadColumnsLeaveEncoderPoolingUnchanged) {
  nn::ModelConfig cfg;
  cfg.model_dim = 8;
  cfg.ff_dim = 16;
  cfg.vocab_size = 12;
  auto enc = nn::make_encoder(cfg, 3);
  std::vector<data::TokenIds> rows{{1, 5, 6, 2}, {1, 7, 2}};
  auto ids = data::pad_rows(rows);
  data::IdMatrix wide = data::IdMatrix::Zero(2, 9);
  wide.leftCols(4) = ids;
  auto a = pool_representation(nn::encode(enc, ids, data::non_pad_mask(ids)), data::non_pad_mask(ids));
  auto b = pool_representation(nn::encode(enc, wide, data::non_pad_mask(wide)), data::non_pad_mask(wide));
  for (std::size_t i = 0; i < a.h.values().size(); ++i) EXPECT_NEAR(a.h.values()[i], b.h.values()[i], 1e-12);
}

TEST(Correlation, IdentityNegationAndHandPearson) {
  auto h = random_h(16, 8, 1);
  EXPECT_NEAR(correlation_distance(h, h).item(), 0.0, 1e-9);
  EXPECT_NEAR(correlation_distance(h, neg(h)).item(), 2.0, 1e-9);
  EXPECT_NEAR(correlation_coefficient(h, h), 1.0, 1e-12);
  EXPECT_NEAR(correlation_coefficient(h, neg(h)), -1.0, 1e-12);

  Tensor x(Shape{4, 1}, std::vector<double>{1, 2, 3, 4});
  Tensor y(Shape{4, 1}, std::vector<double>{1, 3, 2, 4});
  // cov 4, var 5 and 5 (sums of squares): 4 / sqrt(25) = 0.8
  EXPECT_NEAR(correlation_coefficient(x, y), 0.8, 1e-15);
  EXPECT_NEAR(correlation_distance(x, y).item(), 0.2, 1e-15);
}

TEST(Correlation, MatchesTwoPassOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto x = random_h(7, 5, seed), y = random_h(7, 5, seed + 100);
    EXPECT_NEAR(correlation_coefficient(x, y), oracle_corr(x, y), 1e-12);
  }
}

TEST(Correlation, AffineInvarianceAndSymmetry) {
  auto x = random_h(12, 6, 4), y = random_h(12, 6, 5);
  std::mt19937_64 rng(6);
  auto a = Tensor::uniform({6}, 0.1, 5.0, rng);
  auto b = Tensor::uniform({6}, -3.0, 3.0, rng);
  auto x2 = add(mul(x, a), b);
  EXPECT_NEAR(correlation_coefficient(x2, y), correlation_coefficient(x, y), 1e-9);
  EXPECT_NEAR(correlation_distance(x2, y).item(), correlation_distance(x, y).item(), 1e-9);
  EXPECT_EQ(correlation_coefficient(x, y), correlation_coefficient(y, x));
  const double d = correlation_distance(x, y).item();
  EXPECT_GE(d, 0.0);
  EXPECT_LE(d, 2.0);
}

TEST(Correlation, ZeroVarianceDimensionContributesZero) {
  Tensor x(Shape{3, 2}, std::vector<double>{1, 5, 2, 5, 3, 5});
  Tensor y(Shape{3, 2}, std::vector<double>{2, 1, 4, 2, 6, 3});
  EXPECT_NEAR(correlation_coefficient(x, y), 0.5, 1e-15);
  x.set_requires_grad(true);
  Tape tape;
  Tape::Scope scope(tape);
  backward(correlation_distance(x, y));
  for (std::int64_t i = 0; i < 3; ++i) EXPECT_EQ(x.grad()[static_cast<std::size_t>(i * 2 + 1)], 0.0);
}

TEST(Correlation, Errors) {
  auto x = random_h(4, 3, 1);
  try {
    correlation_distance(x, random_h(5, 3, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BatchMismatch);
  }
  try {
    correlation_coefficient(random_h(1, 3, 1), random_h(1, 3, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BatchTooSmall);
  }
}

class DistanceGradients : public ::testing::TestWithParam<int> {};

TEST_P(DistanceGradients, MatchCentralDifferences) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  for (auto kind : {DistanceKind::Corr, DistanceKind::Max, DistanceKind::L1, DistanceKind::L2}) {
    auto x = random_h(6, 4, seed, true), y = random_h(6, 4, seed + 50, true);
    auto rx = grad_check([&](const Tensor& v) { return distance(kind, v, y); }, x);
    auto ry = grad_check([&](const Tensor& v) { return distance(kind, x, v); }, y);
    EXPECT_TRUE(rx.passed && ry.passed) << to_string(kind) << " " << rx.max_relative_error << " " << ry.max_relative_error;
  }
}

INSTANTIATE_TEST_SUITE_P(TwentySeeds, DistanceGradients, ::testing::Range(0, 20));

TEST(OtherDistances, HandValues) {
  Tensor x(Shape{2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor y(Shape{2, 2}, std::vector<double>{0, 5, 3, 1});
  // |diff| = [[1,3],[0,3]]: column means 0.5 and 3.
  EXPECT_DOUBLE_EQ(max_distance(x, y).item(), 3.0);
  EXPECT_DOUBLE_EQ(l1_distance(x, y).item(), (4.0 + 3.0) / 2.0);
  EXPECT_NEAR(l2_distance(x, y).item(), (std::sqrt(10.0) + 3.0) / 2.0, 1e-12);
  EXPECT_DOUBLE_EQ(max_distance(x, x).item(), 0.0);
  EXPECT_DOUBLE_EQ(max_distance(x, add_scalar(x, -0.75)).item(), 0.75);
}

TEST(JointLoss, Arithmetic) {
  auto h = random_h(4, 3, 9);
  auto zero = Tensor::scalar(0.0);
  auto zl = joint_loss(zero, zero, zero, zero, h, h, DistanceKind::Corr, {2, 3, 4, 5, 6});
  EXPECT_NEAR(zl.total_value(), 0.0, 1e-9);

  Tensor x(Shape{4, 1}, std::vector<double>{1, 2, 3, 4});
  Tensor y(Shape{4, 1}, std::vector<double>{1, 3, 2, 4});
  auto one = Tensor::scalar(1.0);
  auto unit = joint_loss(one, one, one, one, x, y, DistanceKind::Corr);
  EXPECT_NEAR(unit.total_value(), 4.2, 1e-12);
  ASSERT_TRUE(unit.d);
  EXPECT_NEAR(*unit.d, 0.2, 1e-15);

  auto a = Tensor::scalar(0.3), b = Tensor::scalar(1.1), c = Tensor::scalar(2.5), d = Tensor::scalar(0.7);
  auto ablated = joint_loss(a, b, c, d, x, y, DistanceKind::Corr, {1, 1, 1, 1, 0});
  auto none = joint_loss(a, b, c, d, x, y, DistanceKind::None);
  EXPECT_EQ(ablated.total_value(), 0.3 + 1.1 + 2.5 + 0.7);
  EXPECT_EQ(none.total_value(), ablated.total_value());
  EXPECT_FALSE(none.d);
  EXPECT_TRUE(ablated.d);

  auto partial = joint_loss(Tensor(), Tensor(), c, Tensor(), x, y, DistanceKind::None);
  EXPECT_FALSE(partial.l_xx);
  EXPECT_EQ(partial.total_value(), 2.5);
}

TEST(JointLoss, KindsParse) {
  for (auto k : {DistanceKind::Corr, DistanceKind::Max, DistanceKind::L1, DistanceKind::L2, DistanceKind::None}) {
    EXPECT_EQ(parse_distance_kind(to_string(k)), k);
  }
  try {
    parse_distance_kind("cosine");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownDistanceKind);
  }
}
