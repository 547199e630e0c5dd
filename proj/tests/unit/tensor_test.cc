#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "karma/error.h"
#include "karma/tensor.h"
#include "test_util.h"

namespace karma {
namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no karma::Error thrown";
  return ErrorCode::kIo;
}

TEST(Tensor, ShapeAndFiniteness) {
  const Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rows(), 2);
  EXPECT_EQ(t.cols(), 3);
  EXPECT_FLOAT_EQ(t.at(1, 2), 6.0f);
  EXPECT_EQ(t.shape_str(), "[2,3]");
  EXPECT_TRUE(t.all_finite());
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), Error);
}

TEST(Ops, MatmulIdentity) {
  Graph g;
  const Var eye = g.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  const Var a = g.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  const Var prod = g.matmul(eye, a);
  const Tensor got = g.value(prod);
  EXPECT_EQ(got, g.value(a));
}

TEST(Ops, SoftmaxOfZerosIsUniform) {
  Graph g;
  const Var s = g.softmax(g.constant(Tensor({2}, {0, 0})), 0);
  EXPECT_FLOAT_EQ(g.value(s)[0], 0.5f);
  EXPECT_FLOAT_EQ(g.value(s)[1], 0.5f);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  Graph g;
  const Var s = g.softmax(g.constant(Tensor({2, 4}, {3, -1, 0.5f, 80, -20, -21, -19, -20})), 1);
  for (int r = 0; r < 2; ++r) {
    float sum = 0;
    for (int c = 0; c < 4; ++c) {
      const float v = g.value(s).at(r, c);
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0f, 1e-5);
  }
  const Var cols = g.softmax(g.constant(Tensor({2, 2}, {1, 2, 3, 4})), 0);
  EXPECT_NEAR(g.value(cols).at(0, 0) + g.value(cols).at(1, 0), 1.0f, 1e-6);
}

TEST(Ops, CrossEntropyOfEqualLogits) {
  Graph g;
  const int target[] = {0};
  const Var l = g.cross_entropy_with_logits(g.constant(Tensor({1, 2}, {0, 0})), target);
  EXPECT_NEAR(g.value(l)[0], std::log(2.0), 1e-6);
}

TEST(Ops, LogSoftmaxRowMatchesGraph) {
  const float in[] = {0.3f, -1.2f, 2.5f, 0.0f};
  float out[4];
  log_softmax_row(in, out, 4);
  Graph g;
  const int targets[] = {2};
  const Var lp = g.log_softmax_gather(g.constant(Tensor({1, 4}, {0.3f, -1.2f, 2.5f, 0.0f})), targets);
  EXPECT_EQ(g.value(lp)[0], out[2]);
  double total = 0;
  for (float v : out) total += std::exp(static_cast<double>(v));
  EXPECT_NEAR(total, 1.0, 1e-6);
}

TEST(Ops, GatherConcatMeanPoolReshape) {
  Graph g;
  const Var table = g.constant(Tensor({3, 2}, {0, 1, 10, 11, 20, 21}));
  const int ids[] = {2, 0, 2};
  const Var rows = g.embedding_gather(table, ids);
  EXPECT_EQ(g.value(rows), Tensor({3, 2}, {20, 21, 0, 1, 20, 21}));
  const Var pooled = g.mean_pool(rows, 0);
  EXPECT_EQ(g.value(pooled), Tensor({1, 2}, {40.0f / 3, 43.0f / 3}));
  const Var parts[] = {rows, rows};
  EXPECT_EQ(g.value(g.concat(parts, 1)).dims, (std::vector<int>{3, 4}));
  EXPECT_EQ(g.value(g.concat(parts, 0)).dims, (std::vector<int>{6, 2}));
  EXPECT_EQ(g.value(g.reshape(rows, {6})).dims, (std::vector<int>{6}));
}

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
  Graph g;
  const Var a = g.constant(Tensor::zeros({2, 3}));
  const Var b = g.constant(Tensor::zeros({2, 3}));
  try {
    g.matmul(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
  }
  EXPECT_EQ(code_of([&] { g.add(a, g.constant(Tensor::zeros({3, 2}))); }), ErrorCode::kShapeMismatch);
  EXPECT_EQ(code_of([&] { g.reshape(a, {5}); }), ErrorCode::kShapeMismatch);
  const int bad_ids[] = {7};
  EXPECT_EQ(code_of([&] { g.embedding_gather(a, bad_ids); }), ErrorCode::kOutOfVocabulary);
}

TEST(Ops, NonFiniteResultsAreRejected) {
  Graph g;
  const Var big = g.constant(Tensor({1}, {3e38f}));
  EXPECT_EQ(code_of([&] { g.scale(big, 10.0f); }), ErrorCode::kNonFinite);
  EXPECT_EQ(code_of([&] { g.constant(Tensor({1}, {std::numeric_limits<float>::quiet_NaN()})); }),
            ErrorCode::kNonFinite);
  const Var x = g.constant(Tensor({1}, {100.0f}));
  EXPECT_EQ(code_of([&] { g.mul(big, x); }), ErrorCode::kNonFinite);
}

TEST(Backward, SquareAtThree) {
  ParameterStore store;
  Parameter& x = store.add("x", Tensor::scalar(3.0f));
  Graph g;
  const Var v = g.param(x);
  g.backward(g.sum(g.mul(v, v)));
  EXPECT_FLOAT_EQ(x.grad[0], 6.0f);
}

TEST(Backward, SigmoidAtZero) {
  ParameterStore store;
  Parameter& x = store.add("x", Tensor::scalar(0.0f));
  Graph g;
  g.backward(g.sum(g.sigmoid(g.param(x))));
  EXPECT_FLOAT_EQ(x.grad[0], 0.25f);
}

TEST(Backward, ReluSubgradientAtZeroIsZero) {
  ParameterStore store;
  Parameter& x = store.add("x", Tensor({3}, {-1, 0, 2}));
  Graph g;
  g.backward(g.sum(g.relu(g.param(x))));
  EXPECT_EQ(x.grad, Tensor({3}, {0, 0, 1}));
}

TEST(Backward, NonScalarLossIsAnError) {
  ParameterStore store;
  Parameter& x = store.add("x", Tensor({2}, {1, 2}));
  Graph g;
  const Var v = g.param(x);
  EXPECT_EQ(code_of([&] { g.backward(v); }), ErrorCode::kNonScalarLoss);
}

TEST(Backward, GradientsAccumulateAcrossUses) {
  ParameterStore store;
  Parameter& x = store.add("x", Tensor::scalar(2.0f));
  Graph g;
  const Var a = g.param(x);
  const Var b = g.param(x);
  g.backward(g.sum(g.add(g.mul(a, a), g.scale(b, 3.0f))));
  EXPECT_FLOAT_EQ(x.grad[0], 7.0f);
}

TEST(Backward, BceClosedForm) {
  ParameterStore store;
  Parameter& z = store.add("z", Tensor({2, 1}, {0.0f, 2.0f}));
  Graph g;
  const float labels[] = {1.0f, 0.0f};
  const Var loss = g.bce_with_logits(g.param(z), labels);
  const double want = (std::log(2.0) + (2.0 + std::log1p(std::exp(-2.0)))) / 2.0;
  EXPECT_NEAR(g.value(loss)[0], want, 1e-6);
  g.backward(loss);
  EXPECT_NEAR(z.grad[0], (0.5 - 1.0) / 2.0, 1e-6);
  EXPECT_NEAR(z.grad[1], (1.0 / (1.0 + std::exp(-2.0))) / 2.0, 1e-6);
}

TEST(Backward, ClippedSurrogatePicksTheClippedBranch) {
  ParameterStore store;
  Parameter& lp = store.add("lp", Tensor({1}, {0.8f}));
  Graph g;
  const float old[] = {0.0f};
  const float adv[] = {1.0f};
  const Var s = g.clipped_surrogate(g.param(lp), old, adv, 0.2f);
  // ratio e^0.8 ~ 2.23, so min(2.23, 1.2) = 1.2 and the gradient is zero.
  EXPECT_NEAR(g.value(s)[0], 1.2f, 1e-6);
  g.backward(s);
  EXPECT_EQ(lp.grad[0], 0.0f);
}

TEST(Backward, ClippedSurrogateUnclippedGradientIsRatioTimesAdvantage) {
  ParameterStore store;
  Parameter& lp = store.add("lp", Tensor({2}, {0.1f, -0.05f}));
  Graph g;
  const float old[] = {0.0f, 0.0f};
  const float adv[] = {2.0f, -1.0f};
  const Var s = g.clipped_surrogate(g.param(lp), old, adv, 0.2f);
  g.backward(s);
  EXPECT_NEAR(lp.grad[0], std::exp(0.1) * 2.0 / 2.0, 1e-6);
  EXPECT_NEAR(lp.grad[1], std::exp(-0.05) * -1.0 / 2.0, 1e-6);
}

TEST(GradCheck, RandomGraphsMatchCentralDifferences) {
  for (uint64_t seed = 1; seed <= 100; ++seed) {
    const auto r = testing::gradcheck_random_graph(seed);
    EXPECT_LE(r.max_rel_error, 1e-3) << "seed " << seed << ": " << r.worst;
    EXPECT_LT(r.forward_error, 1e-4) << "seed " << seed;
    EXPECT_GT(r.checked, 0u);
  }
}

TEST(ParameterStore, CopiesAreDeep) {
  ParameterStore a;
  a.add("w", Tensor({2}, {1, 2}));
  ParameterStore b = a;
  b.at("w").value[0] = 5;
  EXPECT_FLOAT_EQ(a.at("w").value[0], 1.0f);
  EXPECT_FALSE(a.same_values(b));
  EXPECT_THROW(a.at("missing"), Error);
  EXPECT_EQ(a.total_elements(), 2u);
}

}  // namespace
}  // namespace karma
