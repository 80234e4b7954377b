#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "unitprompt/spoken_lm.hpp"
#include "unitprompt/tensor.hpp"

namespace unitprompt {

// Trainable prompt vectors: l input rows plus l key rows and l value rows per
// layer, all living in the model's embedding space.
struct PromptSet {
  std::size_t length = 0;
  std::size_t d_model = 0;
  std::size_t layers = 0;
  Tensor input;              // l x d
  std::vector<Tensor> key;   // layers x (l x d)
  std::vector<Tensor> value; // layers x (l x d)

  // Flat parameter list: input, key[0..N), value[0..N).
  std::vector<Tensor> parameters() const;
  std::vector<std::pair<std::string, Tensor>> named() const;
  PromptSet alias(bool requires_grad) const;
  PromptSet clone() const;
};

PromptSet init_prompts(const LMConfig& config, std::size_t length, std::uint64_t seed, double stddev = 0.02);

// [p^I ; token rows]. Positional encodings are added later over the whole
// sequence starting at index 0.
EmbeddedSequence inject_input(const PromptSet& prompts, const EmbeddedSequence& embedded);

// One attention sublayer on its (already normalized) input x. Keys and values
// of the first l positions come from the prompt rows, the rest from x, both
// through the frozen W^K / W^V; queries use every row of x.
Tensor attention_with_deep_prompts(const AttentionLayer& layer, const Tensor& x, const Tensor& key_prompt,
                                   const Tensor& value_prompt, std::size_t heads);

// l * d * (1 + 2N)
std::size_t prompt_parameter_count(std::size_t length, std::size_t d_model, std::size_t layers);

}  // namespace unitprompt
