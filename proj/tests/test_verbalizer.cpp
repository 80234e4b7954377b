#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "test_util.hpp"
#include "unitprompt/error.hpp"
#include "unitprompt/verbalizer.hpp"

using namespace unitprompt;

namespace {

std::vector<double> one_hot(std::size_t V, std::size_t i) {
  std::vector<double> v(V, 0.0);
  v[i] = 1.0;
  return v;
}

// Repeatedly take the largest remaining count among free (class, unit) pairs.
std::vector<std::size_t> greedy_oracle(std::vector<std::vector<std::size_t>> counts) {
  const std::size_t C = counts.size(), V = counts[0].size();
  std::vector<std::size_t> out(C, V);
  std::vector<bool> unit_taken(V, false);
  while (true) {
    std::size_t bc = C, bu = V, best = 0;
    for (std::size_t c = 0; c < C; ++c) {
      if (out[c] != V) continue;
      for (std::size_t u = 0; u < V; ++u) {
        if (unit_taken[u] || counts[c][u] == 0) continue;
        if (counts[c][u] > best) {
          best = counts[c][u];
          bc = c;
          bu = u;
        }
      }
    }
    if (bc == C) break;
    out[bc] = bu;
    unit_taken[bu] = true;
  }
  for (std::size_t c = 0; c < C; ++c) {
    if (out[c] != V) continue;
    std::size_t u = 0;
    while (unit_taken[u]) ++u;
    out[c] = u;
    unit_taken[u] = true;
  }
  return out;
}

}  // namespace

TEST(Learnable, IdentityAndZeroWeights) {
  LearnableVerbalizer v{Tensor::zeros({4, 4}), Tensor::zeros({4})};
  for (std::size_t i = 0; i < 4; ++i) v.weights.mutable_data()[i * 4 + i] = 1.0;
  Rng rng(1);
  const auto dist = testutil::random_simplex(4, rng);
  EXPECT_EQ(verbalize_learnable(v, dist), dist);

  LearnableVerbalizer z{Tensor::zeros({3, 4}), Tensor::from({3}, {0.5, -1.0, 2.0})};
  EXPECT_EQ(verbalize_learnable(z, dist), (std::vector<double>{0.5, -1.0, 2.0}));
}

TEST(Learnable, MatchesMatrixVectorOracleAndTensorForm) {
  const auto v = init_learnable(20, 3, 4, 1.0);
  Rng rng(2);
  const auto dist = testutil::random_simplex(20, rng);
  const auto scores = verbalize_learnable(v, dist);
  const Tensor t = verbalize_learnable(v, Tensor::from({1, 20}, dist));
  for (std::size_t c = 0; c < 3; ++c) {
    double s = v.bias.data()[c];
    for (std::size_t i = 0; i < 20; ++i) s += v.weights.at(c, i) * dist[i];
    EXPECT_NEAR(scores[c], s, 1e-12);
    EXPECT_NEAR(t.at(0, c), s, 1e-12);
  }
}

TEST(Learnable, Errors) {
  const auto v = init_learnable(5, 2, 1);
  EXPECT_THROW(verbalize_learnable(v, std::vector<double>(4, 0.25)), ShapeError);
  EXPECT_THROW(verbalize_learnable(v, std::vector<double>(5, 0.5)), ValueError);
}

TEST(Learnable, ArgmaxInvariantToConstantBiasShift) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto v = init_learnable(10, 4, trial, 1.0);
    const auto dist = testutil::random_simplex(10, rng);
    const std::size_t before = argmax(verbalize_learnable(v, dist));
    for (double& b : v.bias.mutable_data()) b += 3.7;
    EXPECT_EQ(argmax(verbalize_learnable(v, dist)), before);
  }
}

TEST(RandomMap, PermutationWhenVocabEqualsClasses) {
  const auto m = init_random_map(6, 6, 2);
  EXPECT_EQ(std::set<std::size_t>(m.assignment.begin(), m.assignment.end()).size(), 6u);
  EXPECT_EQ(init_random_map(6, 6, 2).assignment, m.assignment);
  EXPECT_THROW(init_random_map(3, 4, 0), ValueError);
}

TEST(RandomMap, InjectiveAndUniform) {
  std::vector<std::size_t> hits(100, 0);
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const auto m = init_random_map(100, 2, seed);
    ASSERT_NE(m.assignment[0], m.assignment[1]);
    ++hits[m.assignment[0]];
  }
  // Per-unit bound at 3 sigma family-wise (Bonferroni over 100 units: z = 4.0), plus the joint chi-square.
  const double sigma = std::sqrt(10000 * 0.01 * 0.99);
  double chi2 = 0.0;
  for (std::size_t u = 0; u < 100; ++u) {
    EXPECT_NEAR(static_cast<double>(hits[u]), 100.0, 4.0 * sigma) << "unit " << u;
    chi2 += std::pow(static_cast<double>(hits[u]) - 100.0, 2) / 100.0;
  }
  EXPECT_LT(chi2, 148.2);  // 99 dof, p = 0.001
}

TEST(FrequencyMap, UnambiguousCounts) {
  const std::vector<std::vector<double>> r = {one_hot(10, 7), one_hot(10, 7), one_hot(10, 3), one_hot(10, 3)};
  const std::vector<std::size_t> y = {0, 0, 1, 1};
  const auto m = fit_frequency_map(r, y, 2);
  EXPECT_EQ(m.assignment, (std::vector<std::size_t>{7, 3}));
  EXPECT_EQ(m.kind, VerbalizerKind::frequency);
}

TEST(FrequencyMap, ContestedUnitGoesToLargerCount) {
  // Class 0: 3x unit 7. Class 1: 2x unit 7, 1x unit 4.
  const std::vector<std::vector<double>> r = {one_hot(10, 7), one_hot(10, 7), one_hot(10, 7),
                                              one_hot(10, 7), one_hot(10, 7), one_hot(10, 4)};
  const std::vector<std::size_t> y = {0, 0, 0, 1, 1, 1};
  EXPECT_EQ(fit_frequency_map(r, y, 2).assignment, (std::vector<std::size_t>{7, 4}));
}

TEST(FrequencyMap, NoCountsLeftFallsBackToLowestFreeUnit) {
  const std::vector<std::vector<double>> r = {one_hot(5, 0), one_hot(5, 0)};
  const std::vector<std::size_t> y = {0, 1};
  EXPECT_EQ(fit_frequency_map(r, y, 2).assignment, (std::vector<std::size_t>{0, 1}));
}

TEST(FrequencyMap, MatchesGreedyOracleOnRandomCounts) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t C = 2 + rng.below(4), V = C + rng.below(6);
    std::vector<std::vector<double>> readouts;
    std::vector<std::size_t> labels;
    std::vector<std::vector<std::size_t>> counts(C, std::vector<std::size_t>(V, 0));
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t n = 1 + rng.below(6);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t u = rng.below(V);
        readouts.push_back(testutil::random_simplex(V, rng));
        readouts.back()[u] += 2.0;  // argmax is u
        labels.push_back(c);
        ++counts[c][u];
      }
    }
    const auto m = fit_frequency_map(readouts, labels, C);
    EXPECT_EQ(m.assignment, greedy_oracle(counts)) << "trial " << trial;
    EXPECT_EQ(std::set<std::size_t>(m.assignment.begin(), m.assignment.end()).size(), C);
  }
}

TEST(FrequencyMap, Errors) {
  const std::vector<std::vector<double>> r = {one_hot(5, 0)};
  EXPECT_THROW(fit_frequency_map(r, std::vector<std::size_t>{0}, 2), ValueError);  // class 1 empty
  EXPECT_THROW(fit_frequency_map(r, std::vector<std::size_t>{0, 1}, 2), ShapeError);
  EXPECT_THROW(fit_frequency_map(r, std::vector<std::size_t>{4}, 2), ValueError);
}

TEST(Mapped, PredictionRules) {
  MappedVerbalizer m{VerbalizerKind::random, 10, {4, 8, 1}};
  EXPECT_EQ(verbalize_mapped(m, one_hot(10, 1)), 2u);
  EXPECT_EQ(verbalize_mapped(m, std::vector<double>(10, 0.1)), 0u);
  EXPECT_THROW(verbalize_mapped(m, std::vector<double>(9, 0.1)), ShapeError);
  Rng rng(6);
  for (int i = 0; i < 50; ++i) {
    const auto d = testutil::random_simplex(10, rng);
    std::size_t best = 0;
    for (std::size_t c = 1; c < 3; ++c) {
      if (d[m.assignment[c]] > d[m.assignment[best]]) best = c;
    }
    EXPECT_EQ(verbalize_mapped(m, d), best);
  }
}

// Mass moved between non-assigned units flips the learnable prediction only.
TEST(Mapped, IgnoresCoordinatesOffTheAssignment) {
  MappedVerbalizer m{VerbalizerKind::random, 4, {0, 1}};
  LearnableVerbalizer v{Tensor::from({2, 4}, {0, 0, 1, 0, 0, 0, 0, 1}), Tensor::zeros({2})};
  const std::vector<double> a = {0.3, 0.2, 0.4, 0.1}, b = {0.3, 0.2, 0.1, 0.4};
  EXPECT_EQ(verbalize_mapped(m, a), verbalize_mapped(m, b));
  EXPECT_NE(argmax(verbalize_learnable(v, a)), argmax(verbalize_learnable(v, b)));
}

TEST(Verbalizer, KindStringsAndCounts) {
  for (auto k : {VerbalizerKind::learnable, VerbalizerKind::random, VerbalizerKind::frequency}) {
    EXPECT_EQ(verbalizer_kind_from_string(to_string(k)), k);
  }
  EXPECT_THROW(verbalizer_kind_from_string("soft"), ValueError);
  LMConfig c;
  const auto p = init_prompts(c, 5, 0);
  const Verbalizer learn = init_learnable(100, 4, 0), mapped = init_random_map(100, 4, 0);
  EXPECT_EQ(count_trainable(p, mapped), 5u * 64 * 5);
  EXPECT_EQ(count_trainable(p, learn), 5u * 64 * 5 + 404);
  EXPECT_EQ(num_classes(learn), 4u);
  EXPECT_EQ(vocab_of(mapped), 100u);
  EXPECT_EQ(kind_of(mapped), VerbalizerKind::random);
}
