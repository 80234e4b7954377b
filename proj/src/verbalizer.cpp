#include "unitprompt/verbalizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "unitprompt/container.hpp"
#include "unitprompt/error.hpp"
#include "unitprompt/random.hpp"

namespace unitprompt {

std::string_view to_string(VerbalizerKind k) {
  switch (k) {
    case VerbalizerKind::learnable:
      return "learnable";
    case VerbalizerKind::random:
      return "random";
    case VerbalizerKind::frequency:
      return "frequency";
  }
  return "?";
}

VerbalizerKind verbalizer_kind_from_string(std::string_view s) {
  if (s == "learnable") return VerbalizerKind::learnable;
  if (s == "random") return VerbalizerKind::random;
  if (s == "frequency") return VerbalizerKind::frequency;
  throw ValueError("unknown verbalizer '" + std::string(s) + "'");
}

VerbalizerKind kind_of(const Verbalizer& v) {
  if (const auto* m = std::get_if<MappedVerbalizer>(&v)) return m->kind;
  return VerbalizerKind::learnable;
}

std::size_t num_classes(const Verbalizer& v) {
  return std::visit([](const auto& x) { return x.classes(); }, v);
}

std::size_t vocab_of(const Verbalizer& v) {
  if (const auto* m = std::get_if<MappedVerbalizer>(&v)) return m->vocab;
  return std::get<LearnableVerbalizer>(v).vocab();
}

std::size_t argmax(std::span<const double> xs) {
  if (xs.empty()) throw ValueError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (xs[i] > xs[best]) best = i;
  }
  return best;
}

LearnableVerbalizer init_learnable(std::size_t vocab, std::size_t classes, std::uint64_t seed, double stddev) {
  if (classes < 1 || vocab < 1) throw ValueError("init_learnable: empty verbalizer");
  Rng rng(seed, 0, 0x7662);
  std::vector<double> w(classes * vocab);
  for (double& x : w) x = container::round_f32(rng.normal(0.0, stddev));
  return {Tensor::from({classes, vocab}, std::move(w)), Tensor::zeros({classes})};
}

std::vector<double> verbalize_learnable(const LearnableVerbalizer& v, std::span<const double> dist) {
  if (dist.size() != v.vocab()) {
    throw ShapeError("verbalize_learnable: distribution of length " + std::to_string(dist.size()) +
                     " for vocabulary " + std::to_string(v.vocab()));
  }
  const double total = std::accumulate(dist.begin(), dist.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-6) throw ValueError("verbalize_learnable: input does not sum to 1");
  const std::size_t C = v.classes(), V = v.vocab();
  const auto w = v.weights.data();
  const auto b = v.bias.data();
  std::vector<double> scores(C);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < V; ++i) s += w[c * V + i] * dist[i];
    scores[c] = s + b[c];
  }
  return scores;
}

Tensor verbalize_learnable(const LearnableVerbalizer& v, const Tensor& dist) {
  if (dist.cols() != v.vocab()) {
    throw ShapeError("verbalize_learnable: distribution " + shape_str(dist.shape()) + " for vocabulary " +
                     std::to_string(v.vocab()));
  }
  return add_row(matmul_bt(dist, v.weights), v.bias);
}

MappedVerbalizer init_random_map(std::size_t vocab, std::size_t classes, std::uint64_t seed) {
  if (vocab < classes) {
    throw ValueError("init_random_map: " + std::to_string(classes) + " classes need at least as many units, got " +
                     std::to_string(vocab));
  }
  Rng rng(seed, 0, 0x726d);
  std::vector<std::size_t> units(vocab);
  std::iota(units.begin(), units.end(), 0);
  rng.shuffle(units);
  units.resize(classes);
  return {VerbalizerKind::random, vocab, std::move(units)};
}

// Each class counts the argmax unit of its examples' readouts. (count, class,
// unit) triples are visited by descending count, then ascending class id, then
// ascending unit id; a triple is taken when both its class and unit are still
// free. Classes left over get the lowest free unit.
MappedVerbalizer fit_frequency_map(const std::vector<std::vector<double>>& readouts, std::span<const std::size_t> labels,
                                   std::size_t classes) {
  if (readouts.size() != labels.size()) throw ShapeError("fit_frequency_map: readouts and labels differ in length");
  if (readouts.empty()) throw ValueError("fit_frequency_map: no readouts");
  const std::size_t V = readouts.front().size();
  if (V < classes) throw ValueError("fit_frequency_map: vocabulary smaller than class count");
  std::vector<std::vector<std::size_t>> counts(classes, std::vector<std::size_t>(V, 0));
  std::vector<std::size_t> per_class(classes, 0);
  for (std::size_t i = 0; i < readouts.size(); ++i) {
    if (readouts[i].size() != V) throw ShapeError("fit_frequency_map: readouts differ in length");
    if (labels[i] >= classes) throw ValueError("fit_frequency_map: label " + std::to_string(labels[i]) + " out of range");
    ++counts[labels[i]][argmax(readouts[i])];
    ++per_class[labels[i]];
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (per_class[c] == 0) throw ValueError("fit_frequency_map: class " + std::to_string(c) + " has no examples");
  }

  std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> triples;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t u = 0; u < V; ++u) {
      if (counts[c][u] > 0) triples.emplace_back(counts[c][u], c, u);
    }
  }
  std::sort(triples.begin(), triples.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });

  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> assignment(classes, kNone);
  std::vector<bool> taken(V, false);
  for (const auto& [count, c, u] : triples) {
    if (assignment[c] != kNone || taken[u]) continue;
    assignment[c] = u;
    taken[u] = true;
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (assignment[c] != kNone) continue;
    const auto free = static_cast<std::size_t>(std::find(taken.begin(), taken.end(), false) - taken.begin());
    assignment[c] = free;
    taken[free] = true;
  }
  return {VerbalizerKind::frequency, V, std::move(assignment)};
}

std::size_t verbalize_mapped(const MappedVerbalizer& m, std::span<const double> dist) {
  if (dist.size() != m.vocab) {
    throw ShapeError("verbalize_mapped: distribution of length " + std::to_string(dist.size()) + " for vocabulary " +
                     std::to_string(m.vocab));
  }
  std::vector<double> picked(m.assignment.size());
  for (std::size_t c = 0; c < picked.size(); ++c) picked[c] = dist[m.assignment[c]];
  return argmax(picked);
}

std::size_t count_trainable(const PromptSet& prompts, const Verbalizer& v) {
  std::size_t n = prompt_parameter_count(prompts.length, prompts.d_model, prompts.layers);
  if (const auto* l = std::get_if<LearnableVerbalizer>(&v)) n += l->weights.numel() + l->bias.numel();
  return n;
}

}  // namespace unitprompt
