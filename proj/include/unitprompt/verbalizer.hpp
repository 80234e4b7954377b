#pragma once

// Vocabulary-distribution -> class mappings.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "unitprompt/prompting.hpp"
#include "unitprompt/tensor.hpp"

namespace unitprompt {

enum class VerbalizerKind { learnable, random, frequency };

std::string_view to_string(VerbalizerKind k);
VerbalizerKind verbalizer_kind_from_string(std::string_view s);

// scores = weights * dist + bias, weights is C x V.
struct LearnableVerbalizer {
  Tensor weights;
  Tensor bias;

  std::size_t classes() const { return weights.rows(); }
  std::size_t vocab() const { return weights.cols(); }
  LearnableVerbalizer alias(bool requires_grad) const { return {weights.alias(requires_grad), bias.alias(requires_grad)}; }
  LearnableVerbalizer clone() const { return {weights.clone(), bias.clone()}; }
};

// One unit per class; assignment is injective.
struct MappedVerbalizer {
  VerbalizerKind kind = VerbalizerKind::random;
  std::size_t vocab = 0;
  std::vector<std::size_t> assignment;

  std::size_t classes() const { return assignment.size(); }
};

using Verbalizer = std::variant<LearnableVerbalizer, MappedVerbalizer>;

VerbalizerKind kind_of(const Verbalizer& v);
std::size_t num_classes(const Verbalizer& v);
std::size_t vocab_of(const Verbalizer& v);

// Lowest index among the maxima.
std::size_t argmax(std::span<const double> xs);

LearnableVerbalizer init_learnable(std::size_t vocab, std::size_t classes, std::uint64_t seed, double stddev = 0.02);
std::vector<double> verbalize_learnable(const LearnableVerbalizer& v, std::span<const double> dist);
// Differentiable form on a (1 x V) distribution row.
Tensor verbalize_learnable(const LearnableVerbalizer& v, const Tensor& dist);

MappedVerbalizer init_random_map(std::size_t vocab, std::size_t classes, std::uint64_t seed);
// Greedy assignment over per-class argmax-unit counts; see the .cpp for the
// ordering rule.
MappedVerbalizer fit_frequency_map(const std::vector<std::vector<double>>& readouts, std::span<const std::size_t> labels,
                                   std::size_t classes);
std::size_t verbalize_mapped(const MappedVerbalizer& m, std::span<const double> dist);

// Prompt parameters plus verbalizer parameters (zero for mapped verbalizers).
std::size_t count_trainable(const PromptSet& prompts, const Verbalizer& v);

}  // namespace unitprompt
