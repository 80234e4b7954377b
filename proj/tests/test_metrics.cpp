#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "unitprompt/error.hpp"
#include "unitprompt/metrics.hpp"
#include "unitprompt/random.hpp"

using namespace unitprompt;
using Ids = std::vector<std::size_t>;

namespace {

struct EerPoint {
  double value;
  double gap;
};

// Every distinct score as threshold; returns all operating points in ascending threshold order.
std::vector<EerPoint> sweep(const std::vector<double>& s, const Ids& y) {
  std::set<double> thresholds(s.begin(), s.end());
  double pos = 0, neg = 0;
  for (auto l : y) (l ? pos : neg) += 1;
  std::vector<EerPoint> out;
  for (double t : thresholds) {
    double fa = 0, fr = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (y[i] == 0 && s[i] >= t) ++fa;
      if (y[i] == 1 && s[i] < t) ++fr;
    }
    out.push_back({(fa / neg + fr / pos) / 2, std::abs(fa / neg - fr / pos)});
  }
  return out;
}

double eer_oracle(const std::vector<double>& s, const Ids& y) {
  const auto pts = sweep(s, y);
  EerPoint best = pts[0];
  for (const auto& p : pts) {
    if (p.gap < best.gap) best = p;
  }
  return best.value;
}

}  // namespace

TEST(Accuracy, Examples) {
  EXPECT_DOUBLE_EQ(accuracy(Ids{0, 1, 2}, Ids{0, 1, 2}), 1.0);
  EXPECT_DOUBLE_EQ(accuracy(Ids{0, 1, 1, 0}, Ids{0, 1, 0, 1}), 0.5);
  EXPECT_THROW(accuracy(Ids{0, 1}, Ids{0}), ShapeError);
  EXPECT_THROW(accuracy(Ids{}, Ids{}), ValueError);
}

TEST(Accuracy, MatchesCountingOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    Ids p(1 + rng.below(40)), y(p.size());
    std::size_t hit = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = rng.below(3);
      y[i] = rng.below(3);
      hit += p[i] == y[i];
    }
    EXPECT_DOUBLE_EQ(accuracy(p, y), static_cast<double>(hit) / static_cast<double>(p.size()));
  }
}

TEST(MacroF1, Examples) {
  EXPECT_DOUBLE_EQ(macro_f1(Ids{0, 1, 2, 1}, Ids{0, 1, 2, 1}, 3), 1.0);
  EXPECT_DOUBLE_EQ(macro_f1(Ids{1, 1, 0, 0}, Ids{1, 0, 1, 0}, 2), 0.5);
  // Class 2 never appears: contributes 0.
  EXPECT_DOUBLE_EQ(macro_f1(Ids{0, 1}, Ids{0, 1}, 3), 2.0 / 3.0);
  EXPECT_THROW(macro_f1(Ids{0}, Ids{0, 1}, 2), ShapeError);
  EXPECT_THROW(macro_f1(Ids{0}, Ids{5}, 2), ValueError);
}

TEST(MacroF1, MatchesConfusionMatrixOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t C = 2 + rng.below(4);
    Ids p(5 + rng.below(60)), y(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = rng.below(C);
      y[i] = rng.below(C);
    }
    std::vector<std::vector<double>> m(C, std::vector<double>(C, 0.0));
    for (std::size_t i = 0; i < p.size(); ++i) m[y[i]][p[i]] += 1;
    double total = 0;
    for (std::size_t c = 0; c < C; ++c) {
      double tp = m[c][c], fp = 0, fn = 0;
      for (std::size_t o = 0; o < C; ++o) {
        if (o == c) continue;
        fp += m[o][c];
        fn += m[c][o];
      }
      total += tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
    }
    EXPECT_NEAR(macro_f1(p, y, C), total / static_cast<double>(C), 1e-12);
  }
}

TEST(ConfusionMatrix, CountsSumToN) {
  const auto m = confusion_matrix(Ids{0, 1, 1, 2, 0}, Ids{0, 1, 2, 2, 1}, 3);
  EXPECT_EQ(m[2][1], 1u);
  EXPECT_EQ(m[1][0], 1u);
  std::size_t n = 0;
  for (const auto& r : m) {
    for (auto x : r) n += x;
  }
  EXPECT_EQ(n, 5u);
  EXPECT_THROW(confusion_matrix(Ids{3}, Ids{0}, 3), ValueError);
}

TEST(Eer, Examples) {
  EXPECT_DOUBLE_EQ(eer(std::vector<double>{0.9, 0.8, 0.1, 0.2}, Ids{1, 1, 0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(eer(std::vector<double>{0.8, 0.2, 0.7, 0.3}, Ids{1, 1, 0, 0}), 0.5);
}

TEST(Eer, Errors) {
  EXPECT_THROW(eer(std::vector<double>{0.1, 0.2}, Ids{1, 1}), ValueError);
  EXPECT_THROW(eer(std::vector<double>{0.1, 0.2}, Ids{1, 2}), ValueError);
  EXPECT_THROW(eer(std::vector<double>{0.1}, Ids{1, 0}), ShapeError);
}

TEST(Eer, MatchesThresholdSweepOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 4 + rng.below(30);
    std::vector<double> s(n);
    Ids y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = i < 2 ? i : rng.below(2);
      s[i] = std::round(rng.uniform() * 10) / 10 + 0.3 * static_cast<double>(y[i]);  // coarse grid: many ties
    }
    EXPECT_DOUBLE_EQ(eer(s, y), eer_oracle(s, y)) << "trial " << trial;
  }
}

// Swapping labels and negating scores mirrors every operating point; checked
// where the minimal |FAR - FRR| is unique so the tie rule plays no part.
TEST(Eer, LabelSwapSymmetry) {
  Rng rng(4);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 6 + rng.below(20);
    std::vector<double> s(n), neg(n);
    Ids y(n), swapped(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = i < 2 ? i : rng.below(2);
      s[i] = rng.normal() + static_cast<double>(y[i]);
      neg[i] = -s[i];
      swapped[i] = 1 - y[i];
    }
    const auto pts = sweep(s, y);
    double best = INFINITY;
    int at_best = 0;
    for (const auto& p : pts) {
      if (p.gap < best - 1e-12) {
        best = p.gap;
        at_best = 1;
      } else if (std::abs(p.gap - best) <= 1e-12) {
        ++at_best;
      }
    }
    if (at_best != 1 || best >= 1.0) continue;
    EXPECT_DOUBLE_EQ(eer(s, y), eer(neg, swapped)) << "trial " << trial;
    ++checked;
  }
  EXPECT_GT(checked, 50);
}

TEST(Metric, StringRoundTrip) {
  for (auto m : {Metric::acc, Metric::f1, Metric::eer}) EXPECT_EQ(metric_from_string(to_string(m)), m);
  EXPECT_THROW(metric_from_string("auc"), ValueError);
}
