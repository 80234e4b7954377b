#include "unitprompt/tuner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "unitprompt/container.hpp"
#include "unitprompt/error.hpp"
#include "unitprompt/optim.hpp"
#include "unitprompt/random.hpp"

namespace unitprompt {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;
using datagen::UnitSequence;
using kernels::Execution;

// ---- config --------------------------------------------------------------------

void TuneConfig::validate() const {
  if (epochs == 0) throw ValueError("tune: epochs must be positive");
  if (batch == 0) throw ValueError("tune: batch must be positive");
  if (patience == 0) throw ValueError("tune: patience must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValueError("tune: learning rate must be finite and >= 0");
  if (valid_metric == Metric::eer) throw ValueError("tune: validation metric must be acc or f1");
}

ojson TuneConfig::to_json() const {
  ojson j;
  j["epochs"] = epochs;
  j["batch"] = batch;
  j["lr"] = lr;
  j["seed"] = seed;
  j["patience"] = patience;
  j["verbalizer"] = std::string(to_string(verbalizer));
  j["prompt_len"] = prompt_len;
  j["valid_metric"] = std::string(to_string(valid_metric));
  return j;
}

TuneConfig TuneConfig::from_json(const json& j) {
  if (!j.is_object()) throw ValueError("tune config must be a JSON object");
  TuneConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch = j.value("batch", c.batch);
    c.lr = j.value("lr", c.lr);
    c.seed = j.value("seed", c.seed);
    c.patience = j.value("patience", c.patience);
    c.prompt_len = j.value("prompt_len", c.prompt_len);
    if (j.contains("verbalizer")) c.verbalizer = verbalizer_kind_from_string(j.at("verbalizer").get<std::string>());
    if (j.contains("valid_metric")) c.valid_metric = metric_from_string(j.at("valid_metric").get<std::string>());
  } catch (const json::exception& e) {
    throw ValueError(std::string("tune config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string log_ndjson(const TuneLog& log) {
  std::string out;
  for (const auto& r : log.epochs) {
    ojson j;
    j["epoch"] = r.epoch;
    j["train_loss"] = r.train_loss;
    j["valid_metric"] = r.valid_metric;
    out += j.dump() + "\n";
  }
  return out;
}

ojson EvalReport::to_json(const std::string& task) const {
  ojson j;
  j["task"] = task;
  j["metric"] = std::string(to_string(metric));
  j["value"] = value;
  j["n"] = n;
  j["confusion"] = confusion;
  return j;
}

// ---- inference ------------------------------------------------------------------

namespace {

void check_dims(const SpokenLM& lm, const PromptSet& prompts, const Verbalizer& v) {
  if (vocab_of(v) != lm.config.vocab) {
    throw ShapeError("verbalizer vocabulary " + std::to_string(vocab_of(v)) + " does not match backbone vocabulary " +
                     std::to_string(lm.config.vocab));
  }
  if (prompts.length > 0 && (prompts.d_model != lm.config.d_model || prompts.layers != lm.config.layers)) {
    throw ShapeError("prompt dimensions do not match the backbone");
  }
}

std::vector<double> softmax_vec(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - m));
  for (double& x : p) x /= s;
  return p;
}

template <typename Fn>
void for_each_example(std::size_t n, Execution exec, Fn&& fn) {
  if (exec == Execution::parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) fn(static_cast<std::size_t>(i));
  } else {
    for (std::size_t i = 0; i < n; ++i) fn(i);
  }
}

}  // namespace

Tensor example_loss(const SpokenLM& lm, const PromptSet& prompts, const Verbalizer& v, const UnitSequence& seq) {
  const Tensor z = readout_logits(lm, seq, &prompts);
  const std::size_t label[1] = {seq.label};
  if (const auto* lv = std::get_if<LearnableVerbalizer>(&v)) {
    return cross_entropy(verbalize_learnable(*lv, softmax(z)), label);
  }
  const auto& mv = std::get<MappedVerbalizer>(v);
  return cross_entropy(gather_cols(z, mv.assignment), label);
}

std::vector<double> class_scores(const SpokenLM& lm, const PromptSet& prompts, const Verbalizer& v,
                                 const UnitSequence& seq) {
  check_dims(lm, prompts, v);
  const auto dist = next_unit_distribution(lm, seq, &prompts);
  if (const auto* lv = std::get_if<LearnableVerbalizer>(&v)) return verbalize_learnable(*lv, dist);
  const auto& mv = std::get<MappedVerbalizer>(v);
  std::vector<double> picked(mv.classes());
  double s = 0.0;
  for (std::size_t c = 0; c < picked.size(); ++c) s += (picked[c] = dist[mv.assignment[c]]);
  for (double& x : picked) x /= s;
  return picked;
}

std::size_t predict(const SpokenLM& lm, const PromptSet& prompts, const Verbalizer& v, const UnitSequence& seq) {
  return argmax(class_scores(lm, prompts, v, seq));
}

std::vector<std::size_t> predict_batch(const SpokenLM& lm, const PromptSet& prompts, const Verbalizer& v,
                                       const std::vector<UnitSequence>& data, Execution exec) {
  check_dims(lm, prompts, v);
  std::vector<std::size_t> out(data.size());
  for_each_example(data.size(), exec, [&](std::size_t i) { out[i] = predict(lm, prompts, v, data[i]); });
  return out;
}

std::vector<std::vector<double>> readout_distributions(const SpokenLM& lm, const PromptSet& prompts,
                                                       const std::vector<UnitSequence>& data, Execution exec) {
  std::vector<std::vector<double>> out(data.size());
  for_each_example(data.size(), exec,
                   [&](std::size_t i) { out[i] = next_unit_distribution(lm, data[i], &prompts); });
  return out;
}

EvalReport evaluate(const SpokenLM& lm, const PromptSet& prompts, const Verbalizer& v,
                    const std::vector<UnitSequence>& data, Metric metric, Execution exec) {
  if (data.empty()) throw ValueError("evaluate: empty data");
  check_dims(lm, prompts, v);
  const std::size_t C = num_classes(v);
  if (metric == Metric::eer && C != 2) {
    throw ValueError("eer needs a binary task, this one has " + std::to_string(C) + " classes");
  }
  std::vector<std::vector<double>> scores(data.size());
  for_each_example(data.size(), exec, [&](std::size_t i) { scores[i] = class_scores(lm, prompts, v, data[i]); });

  EvalReport r;
  r.metric = metric;
  r.n = data.size();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].label >= C) throw ValueError("evaluate: label " + std::to_string(data[i].label) + " out of range");
    r.predictions.push_back(argmax(scores[i]));
    r.labels.push_back(data[i].label);
  }
  r.confusion = confusion_matrix(r.predictions, r.labels, C);
  switch (metric) {
    case Metric::acc:
      r.value = accuracy(r.predictions, r.labels);
      break;
    case Metric::f1:
      r.value = macro_f1(r.predictions, r.labels, C);
      break;
    case Metric::eer: {
      std::vector<double> pos(data.size());
      for (std::size_t i = 0; i < data.size(); ++i) {
        // Learnable scores are logits; compare them on the probability scale.
        const auto p = std::holds_alternative<LearnableVerbalizer>(v) ? softmax_vec(scores[i]) : scores[i];
        pos[i] = p[1];
      }
      r.value = eer(pos, r.labels);
      break;
    }
  }
  return r;
}

Verbalizer make_verbalizer(VerbalizerKind kind, const SpokenLM& lm, const PromptSet& prompts,
                           const std::vector<UnitSequence>& train, std::size_t classes, std::uint64_t seed,
                           Execution exec) {
  switch (kind) {
    case VerbalizerKind::learnable:
      return init_learnable(lm.config.vocab, classes, seed);
    case VerbalizerKind::random:
      return init_random_map(lm.config.vocab, classes, seed);
    case VerbalizerKind::frequency: {
      std::vector<std::size_t> labels;
      for (const auto& s : train) labels.push_back(s.label);
      return fit_frequency_map(readout_distributions(lm, prompts, train, exec), labels, classes);
    }
  }
  throw ValueError("make_verbalizer: unknown kind");
}

// ---- training ----------------------------------------------------------------------

namespace {

std::vector<Tensor> trainable(const PromptSet& p, const Verbalizer& v) {
  std::vector<Tensor> out = p.parameters();
  if (const auto* lv = std::get_if<LearnableVerbalizer>(&v)) {
    out.push_back(lv->weights);
    out.push_back(lv->bias);
  }
  return out;
}

struct Snapshot {
  std::vector<std::vector<double>> values;
};

Snapshot snapshot(const std::vector<Tensor>& params) {
  Snapshot s;
  for (const auto& t : params) s.values.emplace_back(t.data().begin(), t.data().end());
  return s;
}

void restore(std::vector<Tensor>& params, const Snapshot& s) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].mutable_data();
    std::copy(s.values[i].begin(), s.values[i].end(), dst.begin());
  }
}

struct ExampleGrad {
  double loss = 0.0;
  std::vector<std::vector<double>> grads;
};

ExampleGrad example_grad(const SpokenLM& lm, const PromptSet& prompts, const Verbalizer& v, const UnitSequence& seq) {
  const PromptSet p = prompts.alias(true);
  Verbalizer vv = v;
  if (const auto* lv = std::get_if<LearnableVerbalizer>(&v)) vv = lv->alias(true);
  const Tensor loss = example_loss(lm, p, vv, seq);
  backward(loss);
  ExampleGrad out;
  out.loss = loss.item();
  for (const auto& t : trainable(p, vv)) {
    const auto g = t.grad();
    if (g.empty()) {
      out.grads.emplace_back(t.numel(), 0.0);
    } else {
      out.grads.emplace_back(g.begin(), g.end());
    }
  }
  return out;
}

struct ValidScore {
  double metric = 0.0;
  double loss = 0.0;  // mean cross-entropy
};

ValidScore valid_score(const SpokenLM& lm, const PromptSet& p, const Verbalizer& v,
                       const std::vector<UnitSequence>& data, const TuneConfig& cfg) {
  std::vector<std::vector<double>> scores(data.size());
  for_each_example(data.size(), cfg.exec, [&](std::size_t i) { scores[i] = class_scores(lm, p, v, data[i]); });
  const bool learnable = std::holds_alternative<LearnableVerbalizer>(v);
  std::vector<std::size_t> preds, labels;
  double loss = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto probs = learnable ? softmax_vec(scores[i]) : scores[i];
    loss -= std::log(std::max(probs[data[i].label], 1e-300));
    preds.push_back(argmax(scores[i]));
    labels.push_back(data[i].label);
  }
  ValidScore out;
  out.loss = loss / static_cast<double>(data.size());
  out.metric = cfg.valid_metric == Metric::f1 ? macro_f1(preds, labels, num_classes(v)) : accuracy(preds, labels);
  return out;
}

}  // namespace

TuneLog tune(const SpokenLM& lm, PromptSet& prompts, Verbalizer& v, const std::vector<UnitSequence>& train,
             const std::vector<UnitSequence>& valid, const TuneConfig& cfg) {
  if (!lm.frozen()) throw StateError("tune: backbone is not frozen");
  if (train.empty()) throw ValueError("tune: empty training split");
  cfg.validate();
  check_dims(lm, prompts, v);
  const std::size_t C = num_classes(v);
  for (const auto& s : train) {
    if (s.label >= C) throw ValueError("tune: label " + std::to_string(s.label) + " out of range");
  }

  TuneLog log;
  log.backbone_digest = lm.param_digest();
  const auto& eval_set = valid.empty() ? train : valid;

  std::vector<Tensor> params = trainable(prompts, v);
  AdamState adam(AdamConfig{cfg.lr});
  Snapshot best = snapshot(params);
  double best_score = -1.0;
  double best_loss = INFINITY;
  std::size_t since_best = 0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(cfg.seed, epoch, 0x7475);
    rng.shuffle(order);
    std::vector<double> losses(train.size(), 0.0);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t n = std::min(cfg.batch, order.size() - start);
      std::vector<ExampleGrad> per(n);
      for_each_example(n, cfg.exec,
                       [&](std::size_t i) { per[i] = example_grad(lm, prompts, v, train[order[start + i]]); });
      std::vector<std::vector<double>> grads(params.size());
      for (std::size_t p = 0; p < params.size(); ++p) grads[p].assign(params[p].numel(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        losses[order[start + i]] = per[i].loss;
        for (std::size_t p = 0; p < params.size(); ++p) {
          for (std::size_t q = 0; q < grads[p].size(); ++q) grads[p][q] += per[i].grads[p][q];
        }
      }
      const double inv = 1.0 / static_cast<double>(n);
      for (auto& g : grads) {
        for (double& x : g) x *= inv;
      }
      adam_step(params, grads, adam);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(train.size());
    const ValidScore score = valid_score(lm, prompts, v, eval_set, cfg);
    rec.valid_metric = score.metric;
    log.epochs.push_back(rec);

    // Higher metric wins; on a tie the lower validation loss does.
    if (score.metric > best_score || (score.metric == best_score && score.loss < best_loss)) {
      best_score = score.metric;
      best_loss = score.loss;
      best = snapshot(params);
      log.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }

  restore(params, best);
  for (auto& t : params) container::round_f32(t.mutable_data());
  log.best_valid = best_score;
  if (lm.compute_digest() != log.backbone_digest) throw StateError("tune: backbone parameters changed");
  return log;
}

// ---- checkpoints -----------------------------------------------------------------

namespace {

std::vector<container::NamedTensor> run_tensors(const TunedRun& run) {
  std::vector<container::NamedTensor> out;
  auto push = [&](const std::string& name, const Tensor& t) {
    out.push_back({name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())});
  };
  for (const auto& [name, t] : run.prompts.named()) push(name, t);
  if (const auto* lv = std::get_if<LearnableVerbalizer>(&run.verbalizer)) {
    push("verbalizer.weights", lv->weights);
    push("verbalizer.bias", lv->bias);
  }
  return out;
}

}  // namespace

std::string TunedRun::param_digest() const { return container::digest(run_tensors(*this)); }

void save_run(const TunedRun& run, const std::filesystem::path& path) {
  const auto blobs = run_tensors(run);
  ojson j;
  j["format_version"] = container::kFormatVersion;
  j["kind"] = "run";
  j["config"] = run.config.to_json();
  j["lm_config"] = run.lm_config.to_json();
  j["backbone_digest"] = run.backbone_digest;
  j["num_classes"] = run.classes;
  ojson verb;
  verb["kind"] = std::string(to_string(kind_of(run.verbalizer)));
  if (const auto* mv = std::get_if<MappedVerbalizer>(&run.verbalizer)) verb["assignment"] = mv->assignment;
  j["verbalizer"] = verb;
  j["metrics"] = run.metrics;
  j["param_digest"] = container::digest(blobs);
  j["tensors"] = container::tensors_to_json(blobs);
  container::write_text(path, j.dump() + "\n");
}

TunedRun load_run(const std::filesystem::path& path) {
  const json j = container::read_json(path);
  const std::string where = path.string() + ": ";
  if (!j.is_object() || j.value("kind", std::string()) != "run") throw FormatError(where + "not a tuned-run checkpoint");
  if (j.value("format_version", -1) != container::kFormatVersion) {
    throw FormatError(where + "unsupported format_version");
  }
  TunedRun run;
  try {
    run.config = TuneConfig::from_json(j.at("config"));
    run.lm_config = LMConfig::from_json(j.at("lm_config"));
    run.backbone_digest = j.at("backbone_digest").get<std::string>();
    run.classes = j.at("num_classes").get<std::size_t>();
    if (j.contains("metrics")) run.metrics = j.at("metrics");
  } catch (const json::exception& e) {
    throw FormatError(where + e.what());
  } catch (const ValueError& e) {
    throw FormatError(where + e.what());
  }
  const auto blobs = container::tensors_from_json(j.at("tensors"));
  auto tensor = [&](const std::string& name, const Shape& shape) {
    const auto& b = container::find(blobs, name);
    if (b.shape != shape) {
      throw FormatError(where + "tensor '" + name + "' has shape " + shape_str(b.shape) + ", expected " +
                        shape_str(shape));
    }
    return Tensor::from(b.shape, b.data);
  };

  const std::size_t l = run.config.prompt_len, d = run.lm_config.d_model, N = run.lm_config.layers;
  run.prompts.length = l;
  run.prompts.d_model = d;
  run.prompts.layers = N;
  run.prompts.input = tensor("prompt.input", {l, d});
  for (std::size_t k = 0; k < N; ++k) run.prompts.key.push_back(tensor("prompt.key." + std::to_string(k), {l, d}));
  for (std::size_t k = 0; k < N; ++k) {
    run.prompts.value.push_back(tensor("prompt.value." + std::to_string(k), {l, d}));
  }

  VerbalizerKind kind;
  try {
    kind = verbalizer_kind_from_string(j.at("verbalizer").at("kind").get<std::string>());
  } catch (const std::exception& e) {
    throw FormatError(where + "bad verbalizer entry: " + e.what());
  }
  if (kind == VerbalizerKind::learnable) {
    run.verbalizer = LearnableVerbalizer{tensor("verbalizer.weights", {run.classes, run.lm_config.vocab}),
                                         tensor("verbalizer.bias", {run.classes})};
  } else {
    MappedVerbalizer mv;
    mv.kind = kind;
    mv.vocab = run.lm_config.vocab;
    try {
      mv.assignment = j.at("verbalizer").at("assignment").get<std::vector<std::size_t>>();
    } catch (const json::exception& e) {
      throw FormatError(where + "bad verbalizer assignment: " + e.what());
    }
    if (mv.assignment.size() != run.classes) throw FormatError(where + "assignment length differs from num_classes");
    for (auto u : mv.assignment) {
      if (u >= mv.vocab) throw FormatError(where + "assignment unit out of range");
    }
    run.verbalizer = std::move(mv);
  }

  const std::string recorded = j.value("param_digest", std::string());
  const std::string actual = run.param_digest();
  if (recorded != actual) throw FormatError(where + "param_digest mismatch");
  return run;
}

void check_backbone(const TunedRun& run, const SpokenLM& lm) {
  if (run.backbone_digest != lm.param_digest()) {
    throw StateError("run was tuned against backbone " + run.backbone_digest.substr(0, 12) + "..., got " +
                     lm.param_digest().substr(0, 12) + "...");
  }
}

}  // namespace unitprompt
