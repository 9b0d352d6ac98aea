#include "siaedit/errors.hpp"
#include "siaedit/numcore/grad_check.hpp"
#include "siaedit/numcore/ops.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>

using namespace siaedit;
using namespace siaedit::num;
using siaedit::testing::random_tensor;
using siaedit::testing::weighted_sum;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tensor eye = Tensor::from({2, 2}, std::vector<double>{1, 0, 0, 1});
  Tensor m = Tensor::from({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(matmul(eye, m).values(), m.values());
}

TEST(Matmul, ZeroRightOperand) {
  Tensor a = Tensor::from({2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor z = Tensor::zeros({2, 1});
  Tensor c = matmul(a, z);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c.values(), Values::Zero(2));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    const auto first = msg.find("[2x3]");
    ASSERT_NE(first, std::string::npos);
    EXPECT_NE(msg.find("[2x3]", first + 1), std::string::npos);
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  Tensor a = random_tensor({3, 4}, rng, -1, 1, true);
  Tensor b = random_tensor({4, 2}, rng, -1, 1, true);
  Tensor w = random_tensor({3, 2}, rng);
  std::vector<Tensor> params{a, b};
  auto report = grad_check_params([&] { return weighted_sum(matmul(a, b), w); }, params, 1e-5);
  EXPECT_LT(report.max_relative_error, 1e-6);
  EXPECT_EQ(report.components_checked, 20u);
}

TEST(Softmax, UniformOnEqualLogits) {
  Tensor p = softmax(Tensor::zeros({3}));
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(p.values()[i], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  Tensor p = softmax(Tensor::from({2}, std::vector<double>{1000, 0}));
  EXPECT_TRUE(p.values().allFinite());
  EXPECT_NEAR(p.values()[0], 1.0, 1e-15);
  EXPECT_NEAR(p.values()[1], 0.0, 1e-15);
}

TEST(Softmax, NaNInputIsNumericError) {
  Tensor x = Tensor::from({2}, std::vector<double>{std::numeric_limits<double>::quiet_NaN(), 0});
  EXPECT_THROW(softmax(x), NumericError);
  EXPECT_THROW(log_softmax(x), NumericError);
}

TEST(Softmax, GradientOnLength8) {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({8}, rng, -2, 2);
  Tensor w = random_tensor({8}, rng);
  EXPECT_LT(grad_check([&](const Tensor& t) { return weighted_sum(softmax(t), w); }, x), 1e-6);
}

TEST(Softmax, OutputsFormASimplex) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({4, 7}, rng, -30, 30);
    Tensor sm = softmax(x);
    ConstMatrixMap p = sm.matrix();
    EXPECT_GE(p.minCoeff(), 0.0);
    for (Index r = 0; r < 4; ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-12);
    Tensor lsm = log_softmax(x);
    ConstMatrixMap lp = lsm.matrix();
    for (Index r = 0; r < 4; ++r) EXPECT_NEAR(lp.row(r).array().exp().sum(), 1.0, 1e-12);
  }
}

TEST(Elementwise, LogInvertsExp) {
  std::mt19937_64 rng(7);
  Tensor x = random_tensor({10}, rng, -5, 5);
  EXPECT_TRUE(log(exp(x)).values().isApprox(x.values(), 1e-14));
}

TEST(Elementwise, PowZeroIsOne) {
  std::mt19937_64 rng(8);
  Tensor p = random_tensor({6}, rng, 0.01, 3.0);
  EXPECT_EQ(pow(p, 0.0).values(), Values::Ones(6));
}

TEST(Elementwise, SumGradientIsAllOnes) {
  Tensor x = Tensor::from({2, 3}, std::vector<double>{1, -2, 3, 4, 5, -6}, true);
  Tape tape;
  TapeScope scope(tape);
  tape.backward(sum(x));
  EXPECT_EQ(x.grad(), Values::Ones(6));
}

TEST(Elementwise, LogOfNonPositiveIsDomainError) {
  EXPECT_THROW(log(Tensor::from({2}, std::vector<double>{1.0, 0.0})), DomainError);
  EXPECT_THROW(log(Tensor::from({1}, std::vector<double>{-3.0})), DomainError);
}

TEST(Elementwise, BroadcastRulesAndErrors) {
  Tensor a = Tensor::from({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  Tensor row = Tensor::from({3}, std::vector<double>{10, 20, 30});
  EXPECT_EQ(add(a, row).values(), (Values(6) << 11, 22, 33, 14, 25, 36).finished());
  EXPECT_EQ(mul(a, Tensor::scalar(2)).values(), a.values() * 2);
  EXPECT_THROW(add(a, Tensor::zeros({2})), DimensionError);
}

TEST(Elementwise, MaskFillBlocksGradient) {
  Tensor x = Tensor::from({4}, std::vector<double>{1, 2, 3, 4}, true);
  std::vector<std::uint8_t> mask{0, 1, 0, 1};
  Tape tape;
  TapeScope scope(tape);
  Tensor y = mask_fill(x, mask, -7.0);
  EXPECT_EQ(y.values(), (Values(4) << 1, -7, 3, -7).finished());
  tape.backward(sum(y));
  EXPECT_EQ(x.grad(), (Values(4) << 1, 0, 1, 0).finished());
}

TEST(GradCheck, LinearFunctionHasNoError) {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({5}, rng);
  EXPECT_LT(grad_check([](const Tensor& t) { return sum(t); }, x), 1e-9);
}

TEST(GradCheck, SumOfSquaresAtOneTwoThree) {
  // analytic gradient 2x = [2, 4, 6]
  Tensor x = Tensor::from({3}, std::vector<double>{1, 2, 3});
  EXPECT_LT(grad_check([](const Tensor& t) { return sum(mul(t, t)); }, x), 1e-8);
}

TEST(GradCheck, RejectsNonScalarOutputAndBadStep) {
  Tensor x = Tensor::from({3}, std::vector<double>{1, 2, 3});
  EXPECT_THROW(grad_check([](const Tensor& t) { return exp(t); }, x), ContractError);
  EXPECT_THROW(grad_check([](const Tensor& t) { return sum(t); }, x, 0.0), ContractError);
  EXPECT_THROW(grad_check([](const Tensor& t) { return sum(t); }, x, 0.5), ContractError);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // minimum() deliberately zeroes the gradient above its ceiling; differences
  // straddling the kink disagree with it.
  Tensor x = Tensor::from({1}, std::vector<double>{1.0});
  EXPECT_GT(grad_check([](const Tensor& t) { return sum(minimum(t, 1.0)); }, x), 0.1);
}

namespace {

struct OpCase {
  const char* name;
  Shape shape;
  double lo, hi;
  std::function<Tensor(const Tensor&)> op;
};

std::vector<OpCase> differentiable_ops() {
  std::mt19937_64 rng(99);
  Tensor row = random_tensor({4}, rng);
  Tensor mat = random_tensor({4, 3}, rng);
  Tensor gain = random_tensor({4}, rng, 0.5, 1.5);
  Tensor bias = random_tensor({4}, rng);
  Tensor other = random_tensor({3, 4}, rng);
  std::vector<Index> ids{2, 0, 3};
  std::vector<Index> emb_ids{1, 4, 1, 0};
  std::vector<std::uint8_t> mask{0, 1, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0};
  std::vector<Segment> segs{{0, 1}, {1, 2}};
  return {
      {"add", {3, 4}, -1, 1, [other](const Tensor& x) { return add(x, other); }},
      {"add_row", {3, 4}, -1, 1, [row](const Tensor& x) { return add(x, row); }},
      {"add_row_rhs", {4}, -1, 1, [other](const Tensor& x) { return add(other, x); }},
      {"sub", {3, 4}, -1, 1, [other](const Tensor& x) { return sub(other, x); }},
      {"mul", {3, 4}, -1, 1, [](const Tensor& x) { return mul(x, x); }},
      {"mul_row_rhs", {4}, -1, 1, [other](const Tensor& x) { return mul(other, x); }},
      {"mul_scalar_rhs", {1}, -1, 1, [other](const Tensor& x) { return mul(other, x); }},
      {"scale", {3, 4}, -1, 1, [](const Tensor& x) { return scale(x, -2.5); }},
      {"add_scalar", {3, 4}, -1, 1, [](const Tensor& x) { return add_scalar(x, 0.3); }},
      {"exp", {3, 4}, -2, 2, [](const Tensor& x) { return exp(x); }},
      {"log", {3, 4}, 0.2, 3, [](const Tensor& x) { return log(x); }},
      {"log1p", {3, 4}, -0.8, 3, [](const Tensor& x) { return log1p(x); }},
      {"pow", {3, 4}, 0.2, 2, [](const Tensor& x) { return pow(x, 2.7); }},
      {"pow_fractional", {3, 4}, 0.2, 2, [](const Tensor& x) { return pow(x, 0.2); }},
      {"minimum", {3, 4}, -1, 0.9, [](const Tensor& x) { return minimum(x, 0.95); }},
      {"gelu", {3, 4}, -3, 3, [](const Tensor& x) { return gelu(x); }},
      {"sum", {3, 4}, -1, 1, [](const Tensor& x) { return mul(sum(x), sum(x)); }},
      {"mean", {3, 4}, -1, 1, [](const Tensor& x) { return exp(mean(x)); }},
      {"sum_last", {3, 4}, -1, 1, [](const Tensor& x) { return sum_last(x); }},
      {"mask_fill", {3, 4}, -1, 1, [mask](const Tensor& x) { return mask_fill(x, mask, 0.5); }},
      {"matmul_left", {3, 4}, -1, 1, [mat](const Tensor& x) { return matmul(x, mat); }},
      {"matmul_right", {4, 3}, -1, 1, [other](const Tensor& x) { return matmul(other, x); }},
      {"transpose", {3, 4}, -1, 1, [](const Tensor& x) { return transpose(x); }},
      {"reshape", {3, 4}, -1, 1, [](const Tensor& x) { return reshape(x, {2, 6}); }},
      {"softmax", {3, 4}, -3, 3, [](const Tensor& x) { return softmax(x); }},
      {"log_softmax", {3, 4}, -3, 3, [](const Tensor& x) { return log_softmax(x); }},
      {"gather_last", {3, 4}, -1, 1, [ids](const Tensor& x) { return gather_last(x, ids); }},
      {"embedding", {5, 3}, -1, 1, [emb_ids](const Tensor& x) { return embedding(x, emb_ids); }},
      {"layer_norm_x", {3, 4}, -2, 2, [gain, bias](const Tensor& x) { return layer_norm(x, gain, bias); }},
      {"layer_norm_gain", {4}, 0.5, 1.5,
       [other, bias](const Tensor& g) { return layer_norm(other, g, bias); }},
      {"slice_rows", {3, 4}, -1, 1, [](const Tensor& x) { return slice_rows(x, 1, 2); }},
      {"concat_rows", {3, 4}, -1, 1,
       [other](const Tensor& x) {
         std::vector<Tensor> parts{x, other, slice_rows(x, 0, 1)};
         return concat_rows(parts);
       }},
      {"attention_q", {3, 4}, -1, 1,
       [other, segs](const Tensor& x) { return attention(x, other, mul(other, other), segs, segs, 2, false); }},
      {"attention_kv_causal", {3, 4}, -1, 1,
       [other, segs](const Tensor& x) { return attention(other, x, exp(x), segs, segs, 2, true); }},
      {"attention_self", {3, 4}, -1, 1,
       [segs](const Tensor& x) { return attention(x, scale(x, 0.7), add_scalar(x, 1.0), segs, segs, 1, true); }},
  };
}

}  // namespace

TEST(Properties, EveryDifferentiableOpPassesGradCheckAt20Points) {
  std::mt19937_64 rng(2024);
  for (const auto& c : differentiable_ops()) {
    double worst = 0.0;
    for (int point = 0; point < 20; ++point) {
      Tensor x = random_tensor(c.shape, rng, c.lo, c.hi);
      Tensor probe = c.op(x);
      Tensor w = random_tensor(probe.shape().empty() ? Shape{1} : probe.shape(), rng);
      if (probe.shape().empty()) w = reshape(w, {});
      worst = std::max(worst, grad_check([&](const Tensor& t) { return weighted_sum(c.op(t), w); }, x, 1e-5));
    }
    EXPECT_LT(worst, 1e-6) << c.name;
  }
}

TEST(Attention, CausalRowsIgnoreLaterKeys) {
  std::mt19937_64 rng(4);
  Tensor q = random_tensor({4, 4}, rng), k = random_tensor({4, 4}, rng), v = random_tensor({4, 4}, rng);
  std::vector<Segment> seg{{0, 4}};
  Tensor base = attention(q, k, v, seg, seg, 2, true);
  Tensor k2 = k.clone(false), v2 = v.clone(false);
  k2.mutable_values().tail(4).setConstant(9.0);
  v2.mutable_values().tail(4).setConstant(-9.0);
  Tensor pert = attention(q, k2, v2, seg, seg, 2, true);
  EXPECT_EQ(base.values().head(12), pert.values().head(12));
  EXPECT_NE(base.values().tail(4), pert.values().tail(4));
}

TEST(Tape, ReplaysInExactReverseOrder) {
  Tensor x = Tensor::from({2}, std::vector<double>{0.5, 1.5}, true);
  Tape tape;
  TapeScope scope(tape);
  Tensor a = exp(x);
  Tensor b = mul(a, x);
  Tensor c = sum(b);
  ASSERT_EQ(tape.size(), 3u);
  tape.backward(c);
  EXPECT_EQ(tape.last_replay_order(), (std::vector<std::size_t>{2, 1, 0}));
}

TEST(Tape, ClearFreesIntermediates) {
  Tensor x = Tensor::from({2}, std::vector<double>{0.5, 1.5}, true);
  std::weak_ptr<detail::Node> watched;
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor a = exp(x);
    watched = a.node();
    tape.backward(sum(a));
  }
  EXPECT_FALSE(watched.expired());
  tape.clear();
  EXPECT_TRUE(watched.expired());
  EXPECT_TRUE(tape.empty());
}

TEST(Tape, LeavesWithoutRequiresGradGetNoGradient) {
  Tensor x = Tensor::from({2}, std::vector<double>{0.5, 1.5}, true);
  Tensor c = Tensor::from({2}, std::vector<double>{2, 3}, false);
  Tensor unused = Tensor::from({2}, std::vector<double>{1, 1}, true);
  Tape tape;
  TapeScope scope(tape);
  tape.backward(sum(mul(x, c)));
  EXPECT_TRUE(x.has_grad());
  EXPECT_FALSE(c.has_grad());
  EXPECT_FALSE(unused.has_grad());
  EXPECT_EQ(x.grad(), c.values());
}

TEST(Tape, ReplayAfterResetIsBitIdentical) {
  std::mt19937_64 rng(17);
  Tensor w = random_tensor({4, 4}, rng, -1, 1, true);
  Tensor x = random_tensor({3, 4}, rng);
  auto run = [&] {
    Tape tape;
    TapeScope scope(tape);
    w.zero_grad();
    Tensor y = log_softmax(gelu(matmul(x, w)));
    tape.backward(mean(y));
    return Values(w.grad());
  };
  Values first = run();
  Values second = run();
  EXPECT_EQ(first, second);
}

TEST(Tape, NoRecordingWithoutActiveTape) {
  Tensor x = Tensor::from({2}, std::vector<double>{1, 2}, true);
  Tensor y = exp(x);
  EXPECT_FALSE(y.tracked());
  Tape tape;
  TapeScope scope(tape);
  {
    NoGradScope off;
    EXPECT_FALSE(exp(x).tracked());
  }
  EXPECT_TRUE(exp(x).tracked());
}
