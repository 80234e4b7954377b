#pragma once

// Frozen causal transformer backbone over discrete units.
//
// gslm consumes unit ids only; pgslm sums unit, duration-bin and pitch-bin
// embeddings at every position and adds duration / pitch heads next to the
// next-unit head. Blocks are pre-norm with GELU feed-forward layers and
// learned positional embeddings.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "unitprompt/datagen.hpp"
#include "unitprompt/kernels.hpp"
#include "unitprompt/tensor.hpp"

namespace unitprompt {

struct PromptSet;

enum class Variant { gslm, pgslm };

std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view s);

struct LMConfig {
  Variant variant = Variant::gslm;
  std::size_t vocab = 100;
  std::size_t duration_bins = datagen::kDurationBins;
  std::size_t pitch_bins = datagen::kPitchBins;
  std::size_t d_model = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ff = 256;
  std::size_t max_len = 256;
  std::string positional = "learned";

  void validate() const;
  nlohmann::json to_json() const;
  static LMConfig from_json(const nlohmann::json& j);
};

struct EmbeddingTables {
  Tensor unit;      // V x d
  Tensor duration;  // duration_bins x d (pgslm)
  Tensor pitch;     // pitch_bins x d (pgslm)
  Tensor position;  // max_len x d
};

struct AttentionLayer {
  std::size_t index = 0;
  Tensor ln1_gamma, ln1_beta;
  Tensor wq, wk, wv, wo;  // d x d, applied as x * W
  Tensor ln2_gamma, ln2_beta;
  Tensor ff_w1, ff_b1, ff_w2, ff_b2;
};

struct LMWeights {
  EmbeddingTables embed;
  std::vector<AttentionLayer> layers;
  Tensor final_gamma, final_beta;
  Tensor unit_head_w, unit_head_b;
  Tensor duration_head_w, duration_head_b;  // pgslm
  Tensor pitch_head_w, pitch_head_b;        // pgslm

  // Every defined parameter in checkpoint order.
  std::vector<std::pair<std::string, Tensor>> named() const;
  // Same layout, each tensor a fresh leaf sharing the value buffers.
  LMWeights alias(bool requires_grad) const;
};

class SpokenLM {
 public:
  LMConfig config;
  LMWeights weights;

  bool frozen() const { return frozen_; }
  // Recorded at freeze time; recomputed from the parameters otherwise.
  std::string param_digest() const;
  std::string compute_digest() const;
  std::size_t parameter_count() const;

  // Rounds parameters to float32, records the digest, and marks the model immutable.
  void freeze();

 private:
  friend SpokenLM load_lm(const std::filesystem::path& path);
  bool frozen_ = false;
  std::string digest_;
};

SpokenLM build_lm(const LMConfig& config, std::uint64_t seed);

// Token rows e(u) or e(u)+e(d)+e(f), without positions.
struct EmbeddedSequence {
  Tensor tokens;
  std::size_t size() const { return tokens.rows(); }
};

EmbeddedSequence embed(const SpokenLM& lm, const datagen::UnitSequence& seq);
EmbeddedSequence embed(const LMConfig& config, const LMWeights& weights, const datagen::UnitSequence& seq);
// Layer-0 input without prompts: token rows plus positions 0..T-1.
Tensor input_rows(const SpokenLM& lm, const EmbeddedSequence& x);

enum class Readout { all_positions, last_position };

struct ForwardOutput {
  Tensor unit_logits;      // rows x V
  Tensor duration_logits;  // pgslm only
  Tensor pitch_logits;     // pgslm only
};

struct ForwardOptions {
  const PromptSet* prompts = nullptr;
  Readout readout = Readout::all_positions;
  // When set, receives the residual stream entering each layer.
  std::vector<Tensor>* layer_inputs = nullptr;
};

ForwardOutput forward(const LMConfig& config, const LMWeights& weights, const EmbeddedSequence& x,
                      const ForwardOptions& options = {});
ForwardOutput forward(const SpokenLM& lm, const EmbeddedSequence& x, const ForwardOptions& options = {});

// Unit-stream logits (1 x V) at the final position of the (prompted) sequence.
Tensor readout_logits(const SpokenLM& lm, const datagen::UnitSequence& seq, const PromptSet* prompts);
std::vector<double> next_unit_distribution(const SpokenLM& lm, const datagen::UnitSequence& seq,
                                           const PromptSet* prompts = nullptr);

struct PretrainConfig {
  std::size_t epochs = 10;
  std::size_t batch = 16;
  double lr = 3e-3;
  std::uint64_t seed = 0;
  kernels::Execution exec = kernels::Execution::parallel;
};

struct PretrainLog {
  double initial_loss = 0.0;  // first batch, before any update
  std::vector<double> epoch_loss;
  double valid_ppl_before = 0.0;
  double valid_ppl_after = 0.0;
};

// Next-step loss of one sequence: unit CE, plus duration and pitch CE for pgslm.
Tensor sequence_loss(const LMConfig& config, const LMWeights& weights, const datagen::UnitSequence& seq);

PretrainLog pretrain(SpokenLM& lm, const std::vector<datagen::UnitSequence>& train,
                     const std::vector<datagen::UnitSequence>& valid, const PretrainConfig& cfg);

// exp(mean next-unit CE) over all predicted positions.
double perplexity(const SpokenLM& lm, const std::vector<datagen::UnitSequence>& data);
double next_unit_accuracy(const SpokenLM& lm, const std::vector<datagen::UnitSequence>& data);

void save_lm(const SpokenLM& lm, const std::filesystem::path& path, bool allow_unfrozen = false);
SpokenLM load_lm(const std::filesystem::path& path);

}  // namespace unitprompt
