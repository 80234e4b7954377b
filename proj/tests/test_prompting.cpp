#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "unitprompt/error.hpp"
#include "unitprompt/prompting.hpp"

using namespace unitprompt;

namespace {

LMConfig tiny() {
  LMConfig c;
  c.vocab = 10;
  c.d_model = 8;
  c.layers = 3;
  c.heads = 2;
  c.ff = 16;
  c.max_len = 32;
  return c;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(InitPrompts, ZeroLengthGivesEmptyBlocks) {
  const auto p = init_prompts(tiny(), 0, 1);
  EXPECT_EQ(p.input.numel(), 0u);
  ASSERT_EQ(p.key.size(), 3u);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(p.key[j].numel(), 0u);
    EXPECT_EQ(p.value[j].numel(), 0u);
  }
}

TEST(InitPrompts, DeterministicUnderSeed) {
  const auto a = init_prompts(tiny(), 4, 9), b = init_prompts(tiny(), 4, 9), c = init_prompts(tiny(), 4, 10);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(values(pa[i]), values(pb[i]));
  EXPECT_NE(values(pa[0]), values(pc[0]));
}

TEST(InitPrompts, ReferenceShapesAndStd) {
  LMConfig c;
  c.d_model = 1024;
  c.layers = 12;
  c.heads = 16;
  const auto p = init_prompts(c, 5, 0);
  EXPECT_EQ(p.input.shape(), (Shape{5, 1024}));
  ASSERT_EQ(p.key.size(), 12u);
  ASSERT_EQ(p.value.size(), 12u);
  for (std::size_t j = 0; j < 12; ++j) {
    EXPECT_EQ(p.key[j].shape(), (Shape{5, 1024}));
    EXPECT_EQ(p.value[j].shape(), (Shape{5, 1024}));
  }
  double ss = 0.0;
  std::size_t n = 0;
  for (const auto& t : p.parameters()) {
    for (double x : t.data()) {
      ss += x * x;
      ++n;
    }
  }
  EXPECT_NEAR(std::sqrt(ss / static_cast<double>(n)), 0.02, 0.001);
}

TEST(PromptBudget, ClosedForm) {
  EXPECT_EQ(prompt_parameter_count(5, 1024, 12), 128000u);
  EXPECT_EQ(prompt_parameter_count(0, 1024, 12), 0u);
  EXPECT_EQ(prompt_parameter_count(2, 4, 1), 24u);
  LMConfig c;
  c.d_model = 1024;
  c.layers = 12;
  c.heads = 16;
  std::size_t n = 0;
  for (const auto& t : init_prompts(c, 5, 0).parameters()) n += t.numel();
  EXPECT_EQ(n, 128000u);
}

TEST(InjectInput, ConcatenatesPromptRows) {
  auto c = tiny();
  c.d_model = 4;
  c.heads = 1;
  const auto p = init_prompts(c, 2, 3);
  const EmbeddedSequence x{testutil::random_tensor({3, 4}, 1)};
  const auto y = inject_input(p, x);
  ASSERT_EQ(y.size(), 5u);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_EQ(y.tokens.at(0, j), p.input.at(0, j));
    EXPECT_EQ(y.tokens.at(1, j), p.input.at(1, j));
    for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(y.tokens.at(2 + t, j), x.tokens.at(t, j));
  }
  const auto same = inject_input(init_prompts(c, 0, 3), x);
  EXPECT_EQ(values(same.tokens), values(x.tokens));
}

TEST(InjectInput, WidthMismatchThrows) {
  const auto p = init_prompts(tiny(), 2, 3);
  EXPECT_THROW(inject_input(p, EmbeddedSequence{testutil::random_tensor({3, 5}, 1)}), ShapeError);
}

// Single head, T=3, l=1, d=2, every step written out.
TEST(DeepPrompts, HandSizedOracle) {
  AttentionLayer L;
  L.wq = Tensor::from({2, 2}, {0.5, -0.3, 0.2, 0.8});
  L.wk = Tensor::from({2, 2}, {-0.4, 0.1, 0.7, 0.6});
  L.wv = Tensor::from({2, 2}, {0.9, 0.05, -0.2, 0.3});
  L.wo = Tensor::from({2, 2}, {1.1, -0.5, 0.4, 0.25});
  const Tensor x = Tensor::from({3, 2}, {0.3, -1.2, 0.8, 0.5, -0.6, 0.9});
  const Tensor pk = Tensor::from({1, 2}, {1.5, -0.7}), pv = Tensor::from({1, 2}, {-0.2, 2.0});
  const Tensor out = attention_with_deep_prompts(L, x, pk, pv, 1);

  auto proj = [](double a, double b, const Tensor& w, std::size_t j) { return a * w.at(0, j) + b * w.at(1, j); };
  double q[3][2], k[3][2], v[3][2];
  for (std::size_t t = 0; t < 3; ++t) {
    const double kx0 = t == 0 ? pk.at(0, 0) : x.at(t, 0), kx1 = t == 0 ? pk.at(0, 1) : x.at(t, 1);
    const double vx0 = t == 0 ? pv.at(0, 0) : x.at(t, 0), vx1 = t == 0 ? pv.at(0, 1) : x.at(t, 1);
    for (std::size_t j = 0; j < 2; ++j) {
      q[t][j] = proj(x.at(t, 0), x.at(t, 1), L.wq, j);
      k[t][j] = proj(kx0, kx1, L.wk, j);
      v[t][j] = proj(vx0, vx1, L.wv, j);
    }
  }
  for (std::size_t t = 0; t < 3; ++t) {
    double s[3], mx = -INFINITY, z = 0.0;
    for (std::size_t u = 0; u <= t; ++u) {
      s[u] = (q[t][0] * k[u][0] + q[t][1] * k[u][1]) / std::sqrt(2.0);
      mx = std::max(mx, s[u]);
    }
    for (std::size_t u = 0; u <= t; ++u) z += std::exp(s[u] - mx);
    double h[2] = {0.0, 0.0};
    for (std::size_t u = 0; u <= t; ++u) {
      const double a = std::exp(s[u] - mx) / z;
      h[0] += a * v[u][0];
      h[1] += a * v[u][1];
    }
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(out.at(t, j), proj(h[0], h[1], L.wo, j), 1e-12) << t << "," << j;
  }
}

TEST(DeepPrompts, PromptsEqualToInputRowsReproduceStandardAttention) {
  AttentionLayer L;
  L.wq = testutil::random_tensor({8, 8}, 1);
  L.wk = testutil::random_tensor({8, 8}, 2);
  L.wv = testutil::random_tensor({8, 8}, 3);
  L.wo = testutil::random_tensor({8, 8}, 4);
  const Tensor x = testutil::random_tensor({6, 8}, 5);
  const Tensor standard = attention_with_deep_prompts(L, x, Tensor(), Tensor(), 2);
  const Tensor head = slice_rows(x, 0, 2);
  EXPECT_EQ(values(attention_with_deep_prompts(L, x, head, head, 2)), values(standard));
  const Tensor direct = matmul(causal_attention(matmul(x, L.wq), matmul(x, L.wk), matmul(x, L.wv), 2), L.wo);
  EXPECT_EQ(values(standard), values(direct));
}

TEST(DeepPrompts, SequenceShorterThanPromptThrows) {
  AttentionLayer L;
  L.wq = L.wk = L.wv = L.wo = testutil::random_tensor({4, 4}, 1);
  const Tensor x = testutil::random_tensor({2, 4}, 2), p = testutil::random_tensor({3, 4}, 3);
  EXPECT_THROW(attention_with_deep_prompts(L, x, p, p, 1), ValueError);
}

TEST(DeepPrompts, LayerLocality) {
  const auto lm = build_lm(tiny(), 4);
  Rng rng(5);
  const auto x = embed(lm, testutil::random_sequence(7, 10, rng));
  auto run = [&](const PromptSet& p) {
    std::vector<Tensor> inputs;
    ForwardOptions opt;
    opt.prompts = &p;
    opt.layer_inputs = &inputs;
    const auto out = forward(lm, x, opt);
    inputs.push_back(out.unit_logits);
    return inputs;
  };
  const PromptSet base = init_prompts(lm.config, 2, 6);
  PromptSet changed = base.clone();
  for (double& v : changed.key[1].mutable_data()) v += 0.5;
  for (double& v : changed.value[1].mutable_data()) v -= 0.5;
  const auto a = run(base), b = run(changed);
  ASSERT_EQ(a.size(), 4u);  // three layer inputs plus logits
  EXPECT_EQ(values(a[0]), values(b[0]));
  EXPECT_EQ(values(a[1]), values(b[1]));
  EXPECT_NE(values(a[2]), values(b[2]));
}

TEST(DeepPrompts, ForwardRejectsMismatchedPromptSet) {
  const auto lm = build_lm(tiny(), 4);
  auto other = tiny();
  other.layers = 2;
  const PromptSet p = init_prompts(other, 2, 1);
  Rng rng(5);
  ForwardOptions opt;
  opt.prompts = &p;
  EXPECT_THROW(forward(lm, embed(lm, testutil::random_sequence(4, 10, rng)), opt), ShapeError);
}
