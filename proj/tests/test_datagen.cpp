#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "test_util.hpp"
#include "unitprompt/container.hpp"
#include "unitprompt/datagen.hpp"
#include "unitprompt/error.hpp"

using namespace unitprompt;
using namespace unitprompt::datagen;

TEST(Tasks, RegistryAndUnknownName) {
  const auto names = task_names();
  EXPECT_EQ(names.size(), 6u);
  for (const auto& n : names) EXPECT_NO_THROW(make_task(n, 1).validate()) << n;
  EXPECT_THROW(make_task("nope", 1), ValueError);
}

TEST(Tasks, InvalidSpecRejected) {
  TaskSpec s = make_task("content2", 1);
  s.vocab = 1;
  EXPECT_THROW(generate_corpus(s, 3), ValueError);
  s = make_task("content2", 1);
  s.unvoiced_prob = 1.5;
  EXPECT_THROW(generate_corpus(s, 3), ValueError);
}

TEST(GenerateCorpus, DeterministicAndExecutionIndependent) {
  const auto spec = make_task("mixed4", 9);
  const auto a = generate_corpus(spec, 5, kernels::Execution::serial);
  const auto b = generate_corpus(spec, 5, kernels::Execution::parallel);
  ASSERT_EQ(a.size(), 20u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].label, b[i].label);
    EXPECT_EQ(a[i].features.frames, b[i].features.frames);
    EXPECT_EQ(a[i].features.pitch, b[i].features.pitch);
    EXPECT_EQ(a[i].features.voiced, b[i].features.voiced);
  }
}

TEST(GenerateCorpus, UnvoicedFramesCarrySentinel) {
  const auto corpus = generate_corpus(make_task("prosody2", 2), 10);
  std::size_t unvoiced = 0;
  for (const auto& ex : corpus) {
    ASSERT_GE(ex.features.num_frames(), 1u);
    for (std::size_t t = 0; t < ex.features.pitch.size(); ++t) {
      if (ex.features.voiced[t]) {
        EXPECT_TRUE(std::isfinite(ex.features.pitch[t]));
      } else {
        EXPECT_EQ(ex.features.pitch[t], kUnvoiced);
        ++unvoiced;
      }
    }
  }
  EXPECT_GT(unvoiced, 0u);
}

TEST(GenerateCorpus, ProsodyTaskFeatureMeansAreClassIndependent) {
  const auto spec = make_task("prosody2", 5);
  const auto corpus = generate_corpus(spec, 200);
  const std::size_t D = spec.feature_dim;
  // Per-example mean feature vector, then a two-sample comparison per dimension.
  std::vector<std::vector<double>> per_class[2];
  for (const auto& ex : corpus) {
    std::vector<double> m(D, 0.0);
    const std::size_t T = ex.features.num_frames();
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t d = 0; d < D; ++d) m[d] += ex.features.frames[t * D + d] / static_cast<double>(T);
    }
    per_class[ex.label].push_back(std::move(m));
  }
  for (std::size_t d = 0; d < D; ++d) {
    double mean[2], var[2];
    for (int c = 0; c < 2; ++c) {
      const auto& rows = per_class[c];
      double s = 0, ss = 0;
      for (const auto& r : rows) s += r[d];
      mean[c] = s / static_cast<double>(rows.size());
      for (const auto& r : rows) ss += (r[d] - mean[c]) * (r[d] - mean[c]);
      var[c] = ss / static_cast<double>(rows.size() - 1) / static_cast<double>(rows.size());
    }
    EXPECT_LT(std::abs(mean[0] - mean[1]), 3.0 * std::sqrt(var[0] + var[1])) << "dim " << d;
  }
}

TEST(GenerateCorpus, ContentTaskUnigramCentroidClassifierAbove80Percent) {
  const auto built = build_dataset(make_task("content4", 3), 100, {0.5, 0.25, 0.25});
  const std::size_t V = 100;
  auto hist = [&](const UnitSequence& s) {
    std::vector<double> h(V, 0.0);
    for (auto u : s.units) h[u] += 1.0 / static_cast<double>(s.units.size());
    return h;
  };
  std::vector<std::vector<double>> centroid(4, std::vector<double>(V, 0.0));
  std::vector<double> count(4, 0.0);
  for (const auto& s : built.sequences) {
    if (s.split != Split::train) continue;
    const auto h = hist(s);
    for (std::size_t i = 0; i < V; ++i) centroid[s.label][i] += h[i];
    count[s.label] += 1;
  }
  for (std::size_t c = 0; c < 4; ++c) {
    for (double& x : centroid[c]) x /= count[c];
  }
  std::size_t hit = 0, n = 0;
  for (const auto& s : built.sequences) {
    if (s.split == Split::train) continue;
    const auto h = hist(s);
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t c = 0; c < 4; ++c) {
      double d = 0;
      for (std::size_t i = 0; i < V; ++i) d += (h[i] - centroid[c][i]) * (h[i] - centroid[c][i]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    hit += best == s.label;
    ++n;
  }
  EXPECT_GT(static_cast<double>(hit) / static_cast<double>(n), 0.8);
}

TEST(KMeans, SeparatedPairsGivePairMeans) {
  const std::vector<double> rows = {0.0, 0.0, 0.0, 1.0, 100.0, 100.0, 100.0, 101.0};
  const auto cb = kmeans_fit(rows, 2, 2, 50, 1);
  std::vector<std::vector<double>> cents = {{cb.centroids[0], cb.centroids[1]}, {cb.centroids[2], cb.centroids[3]}};
  std::sort(cents.begin(), cents.end());
  EXPECT_DOUBLE_EQ(cents[0][0], 0.0);
  EXPECT_DOUBLE_EQ(cents[0][1], 0.5);
  EXPECT_DOUBLE_EQ(cents[1][0], 100.0);
  EXPECT_DOUBLE_EQ(cents[1][1], 100.5);
  EXPECT_DOUBLE_EQ(cb.inertia, 1.0);
}

TEST(KMeans, KEqualsDistinctPointsGivesZeroInertia) {
  const std::vector<double> rows = {1, 2, 3, 4, 5, 6, 1, 2, 3, 4};
  const auto cb = kmeans_fit(rows, 2, 3, 20, 7);
  EXPECT_DOUBLE_EQ(cb.inertia, 0.0);
}

TEST(KMeans, InertiaTraceNonIncreasingAndRecomputable) {
  Rng rng(11);
  std::vector<double> rows;
  for (std::size_t i = 0; i < 600; ++i) {
    const double cx = static_cast<double>(i % 5) * 4.0;
    rows.push_back(cx + rng.normal());
    rows.push_back(-cx + rng.normal());
    rows.push_back(rng.normal());
  }
  const auto cb = kmeans_fit(rows, 3, 8, 30, 3);
  ASSERT_FALSE(cb.inertia_trace.empty());
  for (std::size_t i = 1; i < cb.inertia_trace.size(); ++i) {
    EXPECT_LE(cb.inertia_trace[i], cb.inertia_trace[i - 1] + 1e-9);
  }
  const auto ids = quantize_rows(rows, 3, cb);
  double inertia = 0;
  for (std::size_t r = 0; r < ids.size(); ++r) {
    for (std::size_t d = 0; d < 3; ++d) {
      const double diff = rows[r * 3 + d] - cb.centroids[ids[r] * 3 + d];
      inertia += diff * diff;
    }
  }
  EXPECT_NEAR(inertia, cb.inertia, 1e-6 * inertia);
}

TEST(KMeans, FewerRowsThanKThrows) {
  EXPECT_THROW(kmeans_fit(std::vector<double>{1, 2, 3}, 1, 5, 10, 0), ValueError);
}

TEST(Quantize, ExactCentroidTieBreakAndOracle) {
  Codebook cb;
  cb.k = 8;
  cb.dim = 1;
  cb.centroids = {0, 10, 3, 20, 30, 5, 40, 7};
  EXPECT_EQ(quantize_rows(std::vector<double>{7.0}, 1, cb)[0], 7u);
  EXPECT_EQ(quantize_rows(std::vector<double>{4.0}, 1, cb)[0], 2u);  // 3 and 5 equidistant -> lower id
  EXPECT_THROW(quantize_rows(std::vector<double>{1, 2, 3}, 2, cb), ShapeError);

  Rng rng(4);
  Codebook big;
  big.k = 20;
  big.dim = 4;
  for (std::size_t i = 0; i < 80; ++i) big.centroids.push_back(rng.normal());
  std::vector<double> rows;
  for (std::size_t i = 0; i < 400; ++i) rows.push_back(rng.normal());
  const auto ids = quantize_rows(rows, 4, big);
  for (std::size_t r = 0; r < 100; ++r) {
    std::size_t best = 0;
    double bd = INFINITY;
    for (std::size_t c = 0; c < 20; ++c) {
      double d = 0;
      for (std::size_t q = 0; q < 4; ++q) d += std::pow(rows[r * 4 + q] - big.centroids[c * 4 + q], 2);
      if (d < bd) {
        bd = d;
        best = c;
      }
    }
    EXPECT_EQ(ids[r], best);
  }
}

TEST(Codebook, SaveLoadRoundTrip) {
  const auto dir = testutil::scratch_dir("codebook");
  const auto cb = kmeans_fit(testutil::random_vector(300, 2), 3, 5, 10, 1);
  save_codebook(cb, dir / "cb.json");
  const auto back = load_codebook(dir / "cb.json");
  EXPECT_EQ(back.k, cb.k);
  EXPECT_EQ(back.dim, cb.dim);
  EXPECT_EQ(back.centroids, cb.centroids);
}

TEST(Dedup, Examples) {
  const std::vector<std::size_t> x = {5, 5, 5, 2, 2, 9};
  const auto s = dedup(x);
  EXPECT_EQ(s.units, (std::vector<std::size_t>{5, 2, 9}));
  EXPECT_EQ(s.durations, (std::vector<std::size_t>{3, 2, 1}));
  const auto one = dedup(std::vector<std::size_t>{1});
  EXPECT_EQ(one.units, (std::vector<std::size_t>{1}));
  EXPECT_EQ(one.durations, (std::vector<std::size_t>{1}));
  EXPECT_THROW(dedup(std::vector<std::size_t>{}), ValueError);
}

TEST(Dedup, RoundTripOverThousandRandomSequences) {
  Rng rng(8);
  for (int i = 0; i < 1000; ++i) {
    std::vector<std::size_t> x(1 + rng.below(40));
    for (auto& u : x) u = rng.below(4);
    const auto s = dedup(x);
    EXPECT_EQ(expand(s), x);
    for (std::size_t t = 1; t < s.units.size(); ++t) EXPECT_NE(s.units[t], s.units[t - 1]);
    std::size_t total = 0;
    for (auto d : s.durations) total += d;
    EXPECT_EQ(total, x.size());
  }
}

TEST(Dedup, PitchBinsFromVoicedFramesOnly) {
  const PitchBinning b{4.0, 5.0};
  const std::vector<std::size_t> ids = {1, 1, 2, 2};
  const std::vector<double> pitch = {4.0, kUnvoiced, kUnvoiced, kUnvoiced};
  const std::vector<std::uint8_t> voiced = {1, 0, 0, 0};
  const auto s = dedup(ids, pitch, voiced, b);
  EXPECT_EQ(s.pitch[0], 0u);
  EXPECT_EQ(s.pitch[1], kUnvoicedBin);
  EXPECT_EQ(b.bin(5.0), kVoicedPitchBins - 1);
  EXPECT_EQ(duration_bin(0), 0u);
  EXPECT_EQ(duration_bin(1), 0u);
  EXPECT_EQ(duration_bin(100), kDurationBins - 1);
}

TEST(Splits, CountsAndDeterminism) {
  std::vector<UnitSequence> seqs(100);
  for (std::size_t i = 0; i < 100; ++i) {
    seqs[i].units = {i % 7};
    seqs[i].durations = {1};
    seqs[i].pitch = {kUnvoicedBin};
    seqs[i].label = i % 2;
  }
  const auto dir = testutil::scratch_dir("splits");
  auto a = seqs, b = seqs;
  emit_dataset(a, {0.8, 0.1, 0.1}, 5, dir / "a.ndjson");
  emit_dataset(b, {0.8, 0.1, 0.1}, 5, dir / "b.ndjson");
  EXPECT_EQ(container::read_text(dir / "a.ndjson"), container::read_text(dir / "b.ndjson"));
  std::map<std::pair<std::size_t, Split>, std::size_t> counts;
  for (const auto& s : a) ++counts[{s.label, s.split}];
  EXPECT_EQ(select_split(a, Split::train).size(), 80u);
  EXPECT_EQ(select_split(a, Split::valid).size(), 10u);
  EXPECT_EQ(select_split(a, Split::test).size(), 10u);
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_NEAR(static_cast<double>(counts[{c, Split::train}]), 40.0, 1.0);
  }
  const auto back = read_dataset(dir / "a.ndjson");
  ASSERT_EQ(back.size(), 100u);
  for (std::size_t i = 0; i < 100; ++i) {
    EXPECT_EQ(back[i].split, a[i].split);
    EXPECT_EQ(back[i].units, a[i].units);
  }
}

TEST(Splits, ClassTooSmallThrows) {
  std::vector<UnitSequence> seqs(4);
  for (std::size_t i = 0; i < 4; ++i) {
    seqs[i].units = {1};
    seqs[i].durations = {1};
    seqs[i].pitch = {0};
    seqs[i].label = i < 2 ? 0 : 1;
  }
  EXPECT_THROW(assign_splits(seqs, {0.8, 0.1, 0.1}, 1), ValueError);
}

TEST(ReadDataset, MalformedLineNamesLocation) {
  const auto dir = testutil::scratch_dir("baddata");
  container::write_text(dir / "d.ndjson", "{\"units\":[1],\"durations\":[1],\"pitch\":[0],\"label\":0,\"split\":\"train\"}\n{oops\n");
  try {
    read_dataset(dir / "d.ndjson");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos);
  }
}

TEST(BuildDataset, EndToEndDeterministic) {
  const auto a = build_dataset(make_task("content2", 4), 20, {0.6, 0.2, 0.2});
  const auto b = build_dataset(make_task("content2", 4), 20, {0.6, 0.2, 0.2});
  EXPECT_EQ(dataset_ndjson(a.sequences), dataset_ndjson(b.sequences));
  EXPECT_EQ(a.sequences.size(), 40u);
  for (const auto& s : a.sequences) {
    for (auto u : s.units) EXPECT_LT(u, 100u);
    for (auto p : s.pitch) EXPECT_LT(p, kPitchBins);
  }
}
