#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "danp/diffcore/ops.hpp"
#include "danp/error.hpp"
#include "primitive_cases.hpp"

using namespace danp;
using namespace danp::diffcore;

TEST(Tensor, RejectsDataOfWrongLength) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5)), ShapeError);
  Tensor t({2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_THROW(t.reshaped({4}), ShapeError);
}

TEST(Tensor, AllFiniteDetectsNanAndInf) {
  Tensor t({3}, 1.0f);
  EXPECT_TRUE(t.all_finite());
  t[1] = std::numeric_limits<float>::infinity();
  EXPECT_FALSE(t.all_finite());
  t[1] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
}

TEST(Ops, SoftmaxOfEqualLogitsIsUniform) {
  Tape tape;
  Var x = tape.constant(Tensor({1, 2}, {0.0f, 0.0f}));
  const auto& y = softmax(x, 1).value();
  EXPECT_FLOAT_EQ(y[0], 0.5f);
  EXPECT_FLOAT_EQ(y[1], 0.5f);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> n(0.0f, 4.0f);
  Tensor t({16, 9});
  for (auto& v : t.data()) v = n(rng);
  Tape tape;
  const auto& y = softmax(tape.constant(t), 1).value();
  for (std::size_t r = 0; r < 16; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 9; ++c) {
      EXPECT_GE(y[r * 9 + c], 0.0f);
      s += y[r * 9 + c];
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Ops, SoftmaxIsStableForLargeLogits) {
  Tape tape;
  const auto& y = softmax(tape.constant(Tensor({1, 2}, {1000.0f, 1000.0f})), 1).value();
  EXPECT_FLOAT_EQ(y[0], 0.5f);
}

TEST(Ops, BroadcastRequiresSuffixShape) {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({2}));
  try {
    (void)mul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.primitive(), "mul");
    EXPECT_EQ(e.lhs(), shape_string({2, 3}));
    EXPECT_EQ(e.rhs(), shape_string({2}));
  }
  EXPECT_THROW((void)matmul(a, a), ShapeError);
  EXPECT_THROW((void)l2_sq_distance(a, tape.constant(Tensor({3, 2}))), ShapeError);
}

TEST(Ops, NonFiniteOutputRaisesNumericError) {
  Tape tape;
  Var big = tape.constant(Tensor({2}, 3e38f));
  EXPECT_THROW((void)add(big, big), NumericError);
  EXPECT_THROW((void)sqrt(tape.constant(Tensor({1}, -1.0f))), Error);
}

TEST(Ops, InputsAreNotMutated) {
  Tape tape;
  Tensor t({2, 2}, {1.0f, -2.0f, 3.0f, -4.0f});
  Var x = tape.leaf(t, true);
  Var y = sum(mul(relu(x), x));
  (void)tape.backward(y);
  EXPECT_EQ(x.value(), t);
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  Var x = tape.leaf(Tensor({3}, {1.0f, 2.0f, 3.0f}), true);
  const auto g = tape.backward(sum(x));
  const auto& gx = g.of(x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(gx[i], 1.0f);
}

TEST(Backward, FrobeniusGradientIsTwiceInput) {
  Tape tape;
  Var x = tape.leaf(Tensor({2, 2}, 1.0f), true);
  Var f = frobenius_sq(x);
  EXPECT_EQ(f.value().item(), 4.0f);
  const auto grads = tape.backward(f);
  const auto& gx = grads.of(x);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(gx[i], 2.0f);
}

TEST(Backward, FanOutAccumulates) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, {1.5f, -0.5f}), true);
  Var y = sum(add(add(x, x), scale(x, 3.0)));
  const auto grads = tape.backward(y);
  const auto& gx = grads.of(x);
  EXPECT_EQ(gx[0], 5.0f);
  EXPECT_EQ(gx[1], 5.0f);
}

TEST(Backward, RootMustBeScalar) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}), true);
  EXPECT_THROW((void)tape.backward(x), ContractError);
}

TEST(Backward, ConstantsHaveNoGradient) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, 1.0f), true);
  Var c = tape.constant(Tensor({2}, 2.0f));
  const auto g = tape.backward(sum(mul(x, c)));
  EXPECT_TRUE(g.has(x));
  EXPECT_FALSE(g.has(c));
  EXPECT_THROW((void)g.of(c), ContractError);
}

TEST(StopGradient, ForwardIsIdentity) {
  Tape tape;
  Tensor t({3}, {0.25f, -1.0f, 7.0f});
  Var x = tape.leaf(t, true);
  EXPECT_EQ(stop_gradient(x).value(), t);
}

TEST(StopGradient, BlocksGradient) {
  Tape tape;
  Var x = tape.leaf(Tensor({3}, {0.25f, -1.0f, 7.0f}), true);
  Var y = add(sum(square(stop_gradient(x))), sum(x));
  const auto grads = tape.backward(y);
  const auto& gx = grads.of(x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(gx[i], 1.0f);
}

TEST(Tape, ParentsPrecedeChildren) {
  Tape tape;
  Var a = tape.leaf(Tensor({1}, 1.0f), true);
  Var b = tape.leaf(Tensor({1}, 2.0f), true);
  Var c = mul(a, b);
  Var d = add(c, a);
  EXPECT_LT(a.id(), c.id());
  EXPECT_LT(b.id(), c.id());
  EXPECT_LT(c.id(), d.id());
  EXPECT_EQ(tape.size(), 4u);
}

class PrimitiveVjp : public ::testing::TestWithParam<std::size_t> {};

TEST_P(PrimitiveVjp, MatchesCentralDifferences) {
  const auto cases = oracle::primitive_cases();
  const auto& pc = cases.at(GetParam());
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto stats = oracle::check_primitive(pc, seed);
    EXPECT_TRUE(stats.ok()) << pc.name << " seed " << seed << ": " << stats.passed << "/" << stats.total
                            << " max err " << stats.max_abs_err;
  }
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveVjp, ::testing::Range<std::size_t>(0, oracle::primitive_cases().size()),
                         [](const ::testing::TestParamInfo<std::size_t>& info) {
                           return oracle::primitive_cases()[info.param].name;
                         });

TEST(Ops, MatmulMatchesNaiveDoubleProduct) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor a({7, 13}), b({13, 5});
  for (auto& v : a.data()) v = u(rng);
  for (auto& v : b.data()) v = u(rng);
  Tape tape;
  const auto& c = matmul(tape.constant(a), tape.constant(b)).value();
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 13; ++k) s += static_cast<double>(a[i * 13 + k]) * b[k * 5 + j];
      EXPECT_NEAR(c[i * 5 + j], s, 1e-6);
    }
}
