#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "unitprompt/error.hpp"
#include "unitprompt/optim.hpp"
#include "unitprompt/tensor.hpp"

using namespace unitprompt;
using testutil::random_tensor;

namespace {

// sum(f(x) * r) for a fixed random r, so every output coordinate matters.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) { return sum(mul(y, random_tensor(y.shape(), seed))); }

}  // namespace

TEST(Tensor, MatmulMatchesTripleLoop) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const std::size_t m = 1 + rng.below(9), k = 1 + rng.below(9), n = 1 + rng.below(9);
    const Tensor a = random_tensor({m, k}, seed * 2 + 1), b = random_tensor({k, n}, seed * 2 + 2);
    const Tensor c = matmul(a, b);
    ASSERT_EQ(c.shape(), (Shape{m, n}));
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a.at(i, p) * b.at(p, j);
        EXPECT_NEAR(c.at(i, j), s, 1e-12);
      }
    }
  }
}

TEST(Tensor, MatmulBtEqualsMatmulWithTranspose) {
  const Tensor a = random_tensor({3, 5}, 1), b = random_tensor({4, 5}, 2);
  std::vector<double> bt(20);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 5; ++j) bt[j * 4 + i] = b.at(i, j);
  }
  const Tensor x = matmul_bt(a, b), y = matmul(a, Tensor::from({5, 4}, bt));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(x.data()[i], y.data()[i], 1e-12);
}

TEST(Tensor, ShapeErrors) {
  EXPECT_THROW(matmul(random_tensor({2, 3}, 1), random_tensor({2, 3}, 2)), ShapeError);
  EXPECT_THROW(add(random_tensor({2, 3}, 1), random_tensor({3, 2}, 2)), ShapeError);
  EXPECT_THROW(add_row(random_tensor({2, 3}, 1), random_tensor({2}, 2)), ShapeError);
  EXPECT_THROW(backward(random_tensor({2}, 1)), ShapeError);
  EXPECT_THROW(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
}

TEST(Tensor, CrossEntropyTargetOutOfRangeNamesIndex) {
  const Tensor z = random_tensor({2, 3}, 1);
  const std::size_t targets[] = {0, 7};
  try {
    cross_entropy(z, targets);
    FAIL() << "expected ValueError";
  } catch (const ValueError& e) {
    EXPECT_NE(std::string(e.what()).find('7'), std::string::npos);
  }
}

TEST(Tensor, EmbeddingRejectsBadId) {
  const Tensor table = random_tensor({4, 2}, 1);
  const std::size_t ids[] = {1, 9};
  EXPECT_THROW(embedding(table, ids), ValueError);
}

TEST(Tensor, LayerNormZeroLengthAxisThrows) {
  EXPECT_THROW(layer_norm(Tensor::zeros({2, 0}), Tensor::zeros({0}), Tensor::zeros({0})), ShapeError);
}

TEST(Tensor, SoftmaxNonFiniteThrows) {
  EXPECT_THROW(softmax(Tensor::from({1, 2}, {1.0, NAN})), NumericError);
}

TEST(Tensor, SoftmaxRowsSumToOneAndShiftInvariant) {
  const Tensor x = random_tensor({4, 7}, 3, 5.0);
  const Tensor p = softmax(x);
  std::vector<double> shifted(x.data().begin(), x.data().end());
  for (double& v : shifted) v += 100.0;
  const Tensor q = softmax(Tensor::from({4, 7}, shifted));
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      s += p.at(r, c);
      EXPECT_NEAR(p.at(r, c), q.at(r, c), 1e-12);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Tensor, SoftmaxAlongFirstAxis) {
  const Tensor p = softmax(random_tensor({3, 4}, 5), 0);
  for (std::size_t c = 0; c < 4; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < 3; ++r) s += p.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Tensor, FrozenLeavesReceiveNoGradient) {
  const Tensor w = random_tensor({3, 3}, 1);  // requires_grad = false
  const Tensor x = random_tensor({2, 3}, 2).clone(true);
  backward(sum(matmul(x, w)));
  EXPECT_TRUE(w.grad().empty());
  EXPECT_FALSE(x.grad().empty());
}

TEST(Tensor, AliasSharesValuesButNotGradients) {
  const Tensor base = random_tensor({2, 2}, 1);
  const Tensor a = base.alias(true), b = base.alias(true);
  backward(sum(a));
  EXPECT_FALSE(a.grad().empty());
  EXPECT_TRUE(b.grad().empty());
  EXPECT_EQ(a.data().data(), b.data().data());
}

struct GradCase {
  const char* name;
  std::vector<Shape> shapes;
  std::function<Tensor(std::span<const Tensor>)> fn;
};

class GradCheck : public ::testing::TestWithParam<GradCase> {};

TEST_P(GradCheck, AnalyticMatchesCentralDifference) {
  const auto& c = GetParam();
  std::vector<Tensor> params;
  for (std::size_t i = 0; i < c.shapes.size(); ++i) params.push_back(random_tensor(c.shapes[i], 100 + i, 0.7));
  EXPECT_LT(grad_check(c.fn, params, 1e-5), 1e-6) << c.name;
}

const std::size_t kTargets[] = {2, 0, 3};
const std::size_t kIds[] = {1, 4, 1, 0};
const std::size_t kCols[] = {3, 0, 3};

INSTANTIATE_TEST_SUITE_P(
    Ops, GradCheck,
    ::testing::Values(
        GradCase{"matmul", {{3, 4}, {4, 2}}, [](auto p) { return weighted_sum(matmul(p[0], p[1]), 1); }},
        GradCase{"matmul_bt", {{3, 4}, {5, 4}}, [](auto p) { return weighted_sum(matmul_bt(p[0], p[1]), 1); }},
        GradCase{"add_sub_mul", {{3, 4}, {3, 4}},
                 [](auto p) { return weighted_sum(mul(add(p[0], p[1]), sub(p[0], p[1])), 2); }},
        GradCase{"scale", {{2, 3}}, [](auto p) { return weighted_sum(scale(p[0], -1.7), 3); }},
        GradCase{"add_row", {{3, 4}, {4}}, [](auto p) { return weighted_sum(add_row(p[0], p[1]), 4); }},
        GradCase{"gelu", {{3, 5}}, [](auto p) { return weighted_sum(gelu(p[0]), 5); }},
        GradCase{"softmax_last", {{3, 5}}, [](auto p) { return weighted_sum(softmax(p[0]), 6); }},
        GradCase{"softmax_first", {{3, 5}}, [](auto p) { return weighted_sum(softmax(p[0], 0), 7); }},
        GradCase{"log_softmax", {{3, 5}}, [](auto p) { return weighted_sum(log_softmax(p[0]), 8); }},
        GradCase{"layer_norm", {{3, 6}, {6}, {6}},
                 [](auto p) { return weighted_sum(layer_norm(p[0], p[1], p[2]), 9); }},
        GradCase{"cross_entropy", {{3, 4}}, [](auto p) { return cross_entropy(p[0], kTargets); }},
        GradCase{"embedding", {{5, 3}}, [](auto p) { return weighted_sum(embedding(p[0], kIds), 10); }},
        GradCase{"concat_slice", {{2, 3}, {3, 3}},
                 [](auto p) { return weighted_sum(slice_rows(concat_rows(p[0], p[1]), 1, 4), 11); }},
        GradCase{"gather_cols", {{2, 5}}, [](auto p) { return weighted_sum(gather_cols(p[0], kCols), 12); }},
        GradCase{"reshape", {{2, 6}}, [](auto p) { return weighted_sum(reshape(p[0], {3, 4}), 13); }},
        GradCase{"causal_attention", {{4, 6}, {4, 6}, {4, 6}},
                 [](auto p) { return weighted_sum(causal_attention(p[0], p[1], p[2], 2), 14); }}),
    [](const auto& info) { return std::string(info.param.name); });

TEST(Tensor, CausalAttentionIgnoresFuturePositions) {
  const Tensor q = random_tensor({5, 4}, 1), k = random_tensor({5, 4}, 2), v = random_tensor({5, 4}, 3);
  const Tensor base = causal_attention(q, k, v, 2);
  std::vector<double> kv(k.data().begin(), k.data().end()), vv(v.data().begin(), v.data().end());
  for (std::size_t j = 0; j < 4; ++j) {
    kv[4 * 4 + j] += 10.0;
    vv[4 * 4 + j] -= 10.0;
  }
  const Tensor probe = causal_attention(q, Tensor::from({5, 4}, kv), Tensor::from({5, 4}, vv), 2);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(base.at(r, c), probe.at(r, c));
  }
  EXPECT_NE(base.at(4, 0), probe.at(4, 0));
}

TEST(Tensor, CausalAttentionFirstRowCopiesValue) {
  const Tensor q = random_tensor({3, 4}, 1), k = random_tensor({3, 4}, 2), v = random_tensor({3, 4}, 3);
  const Tensor out = causal_attention(q, k, v, 2);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out.at(0, c), v.at(0, c), 1e-15);
}
