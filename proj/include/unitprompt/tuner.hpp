#pragma once

// Joint training of prompts and verbalizer against a frozen backbone, plus
// evaluation and tuned-run checkpoints.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "unitprompt/datagen.hpp"
#include "unitprompt/kernels.hpp"
#include "unitprompt/metrics.hpp"
#include "unitprompt/prompting.hpp"
#include "unitprompt/spoken_lm.hpp"
#include "unitprompt/verbalizer.hpp"

namespace unitprompt {

struct TuneConfig {
  std::size_t epochs = 30;
  std::size_t batch = 16;
  double lr = 1e-2;
  std::uint64_t seed = 0;
  std::size_t patience = 5;
  VerbalizerKind verbalizer = VerbalizerKind::learnable;
  std::size_t prompt_len = 5;
  Metric valid_metric = Metric::acc;
  kernels::Execution exec = kernels::Execution::parallel;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static TuneConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double valid_metric = 0.0;
};

struct TuneLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_valid = 0.0;
  std::string backbone_digest;
};

// {"epoch","train_loss","valid_metric"} per line.
std::string log_ndjson(const TuneLog& log);

struct EvalReport {
  Metric metric = Metric::acc;
  double value = 0.0;
  std::size_t n = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [label][pred]
  std::vector<std::size_t> predictions;
  std::vector<std::size_t> labels;

  // {"task","metric","value","n","confusion"}
  nlohmann::ordered_json to_json(const std::string& task) const;
};

// Verbalizer matching `kind`. The frequency map is fitted on the readouts of
// `train` under the given (initial) prompts.
Verbalizer make_verbalizer(VerbalizerKind kind, const SpokenLM& lm, const PromptSet& prompts,
                           const std::vector<datagen::UnitSequence>& train, std::size_t classes, std::uint64_t seed,
                           kernels::Execution exec = kernels::Execution::parallel);

// Cross-entropy of one labeled sequence. Learnable verbalizers score the
// readout distribution; mapped ones use the assigned-unit logits.
Tensor example_loss(const SpokenLM& lm, const PromptSet& prompts, const Verbalizer& v,
                    const datagen::UnitSequence& seq);

// Class scores: learnable -> W p + b, mapped -> renormalized assigned-unit
// probabilities.
std::vector<double> class_scores(const SpokenLM& lm, const PromptSet& prompts, const Verbalizer& v,
                                 const datagen::UnitSequence& seq);
std::size_t predict(const SpokenLM& lm, const PromptSet& prompts, const Verbalizer& v,
                    const datagen::UnitSequence& seq);
std::vector<std::size_t> predict_batch(const SpokenLM& lm, const PromptSet& prompts, const Verbalizer& v,
                                       const std::vector<datagen::UnitSequence>& data,
                                       kernels::Execution exec = kernels::Execution::parallel);
std::vector<std::vector<double>> readout_distributions(const SpokenLM& lm, const PromptSet& prompts,
                                                       const std::vector<datagen::UnitSequence>& data,
                                                       kernels::Execution exec = kernels::Execution::parallel);

// Metric over `data`. EER uses class-1 probability and needs two classes.
EvalReport evaluate(const SpokenLM& lm, const PromptSet& prompts, const Verbalizer& v,
                    const std::vector<datagen::UnitSequence>& data, Metric metric,
                    kernels::Execution exec = kernels::Execution::parallel);

// Updates `prompts` (and a learnable `v`) in place and leaves them at the
// best-validation epoch, rounded to float32. Throws StateError for an
// unfrozen backbone and ValueError for an empty training set.
TuneLog tune(const SpokenLM& lm, PromptSet& prompts, Verbalizer& v, const std::vector<datagen::UnitSequence>& train,
             const std::vector<datagen::UnitSequence>& valid, const TuneConfig& cfg);

struct TunedRun {
  TuneConfig config;
  LMConfig lm_config;
  std::string backbone_digest;
  std::size_t classes = 0;
  PromptSet prompts;
  Verbalizer verbalizer;
  nlohmann::ordered_json metrics = nlohmann::ordered_json::object();

  std::string param_digest() const;
};

void save_run(const TunedRun& run, const std::filesystem::path& path);
// FormatError on malformed files or digest mismatch.
TunedRun load_run(const std::filesystem::path& path);
// StateError when the run was tuned against a different backbone.
void check_backbone(const TunedRun& run, const SpokenLM& lm);

}  // namespace unitprompt
