#include "unitprompt/prompting.hpp"

#include "unitprompt/container.hpp"
#include "unitprompt/error.hpp"
#include "unitprompt/random.hpp"

namespace unitprompt {

std::vector<Tensor> PromptSet::parameters() const {
  std::vector<Tensor> out{input};
  out.insert(out.end(), key.begin(), key.end());
  out.insert(out.end(), value.begin(), value.end());
  return out;
}

std::vector<std::pair<std::string, Tensor>> PromptSet::named() const {
  std::vector<std::pair<std::string, Tensor>> out{{"prompt.input", input}};
  for (std::size_t j = 0; j < key.size(); ++j) out.emplace_back("prompt.key." + std::to_string(j), key[j]);
  for (std::size_t j = 0; j < value.size(); ++j) out.emplace_back("prompt.value." + std::to_string(j), value[j]);
  return out;
}

PromptSet PromptSet::alias(bool requires_grad) const {
  PromptSet p{length, d_model, layers, input.alias(requires_grad), {}, {}};
  for (const auto& k : key) p.key.push_back(k.alias(requires_grad));
  for (const auto& v : value) p.value.push_back(v.alias(requires_grad));
  return p;
}

PromptSet PromptSet::clone() const {
  PromptSet p{length, d_model, layers, input.clone(), {}, {}};
  for (const auto& k : key) p.key.push_back(k.clone());
  for (const auto& v : value) p.value.push_back(v.clone());
  return p;
}

PromptSet init_prompts(const LMConfig& config, std::size_t length, std::uint64_t seed, double stddev) {
  Rng rng(seed, 0, 0x7072);
  const std::size_t d = config.d_model;
  auto block = [&] {
    std::vector<double> v(length * d);
    for (double& x : v) x = container::round_f32(rng.normal(0.0, stddev));
    return Tensor::from({length, d}, std::move(v));
  };
  PromptSet p;
  p.length = length;
  p.d_model = d;
  p.layers = config.layers;
  p.input = block();
  for (std::size_t j = 0; j < config.layers; ++j) p.key.push_back(block());
  for (std::size_t j = 0; j < config.layers; ++j) p.value.push_back(block());
  return p;
}

EmbeddedSequence inject_input(const PromptSet& prompts, const EmbeddedSequence& embedded) {
  if (prompts.length == 0) return embedded;
  if (embedded.tokens.cols() != prompts.d_model) {
    throw ShapeError("inject_input: prompt width " + std::to_string(prompts.d_model) + " vs embedding width " +
                     std::to_string(embedded.tokens.cols()));
  }
  return {concat_rows(prompts.input, embedded.tokens)};
}

Tensor attention_with_deep_prompts(const AttentionLayer& layer, const Tensor& x, const Tensor& key_prompt,
                                   const Tensor& value_prompt, std::size_t heads) {
  const std::size_t T = x.rows();
  const std::size_t l = key_prompt.defined() ? key_prompt.rows() : 0;
  if (value_prompt.defined() && value_prompt.rows() != l) {
    throw ShapeError("attention_with_deep_prompts: key and value prompts differ in length");
  }
  if (T < l) {
    throw ValueError("attention_with_deep_prompts: sequence of " + std::to_string(T) + " rows shorter than prompt length " +
                     std::to_string(l));
  }
  Tensor key_in = x;
  Tensor value_in = x;
  if (l > 0) {
    if (key_prompt.cols() != x.cols() || value_prompt.cols() != x.cols()) {
      throw ShapeError("attention_with_deep_prompts: prompt width does not match layer width");
    }
    const Tensor rest = slice_rows(x, l, T);
    key_in = concat_rows(key_prompt, rest);
    value_in = concat_rows(value_prompt, rest);
  }
  const Tensor q = matmul(x, layer.wq);
  const Tensor k = matmul(key_in, layer.wk);
  const Tensor v = matmul(value_in, layer.wv);
  return matmul(causal_attention(q, k, v, heads), layer.wo);
}

std::size_t prompt_parameter_count(std::size_t length, std::size_t d_model, std::size_t layers) {
  return length * d_model * (1 + 2 * layers);
}

}  // namespace unitprompt
