#include "unitprompt/spoken_lm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "unitprompt/container.hpp"
#include "unitprompt/error.hpp"
#include "unitprompt/optim.hpp"
#include "unitprompt/prompting.hpp"
#include "unitprompt/random.hpp"

namespace unitprompt {

using container::json;

std::string_view to_string(Variant v) { return v == Variant::gslm ? "gslm" : "pgslm"; }

Variant variant_from_string(std::string_view s) {
  if (s == "gslm") return Variant::gslm;
  if (s == "pgslm") return Variant::pgslm;
  throw ValueError("unknown variant '" + std::string(s) + "'");
}

void LMConfig::validate() const {
  if (vocab < 2) throw ValueError("LMConfig: vocab must be >= 2");
  if (layers < 1) throw ValueError("LMConfig: need at least one layer");
  if (d_model == 0 || heads == 0 || d_model % heads != 0) {
    throw ValueError("LMConfig: heads (" + std::to_string(heads) + ") must divide d_model (" +
                     std::to_string(d_model) + ")");
  }
  if (ff == 0 || max_len == 0) throw ValueError("LMConfig: ff and max_len must be positive");
  if (variant == Variant::pgslm && (duration_bins == 0 || pitch_bins == 0)) {
    throw ValueError("LMConfig: pgslm needs duration and pitch bins");
  }
  if (positional != "learned") throw ValueError("LMConfig: unsupported positional encoding '" + positional + "'");
}

json LMConfig::to_json() const {
  return {{"variant", to_string(variant)}, {"vocab", vocab},     {"duration_bins", duration_bins},
          {"pitch_bins", pitch_bins},      {"d_model", d_model}, {"layers", layers},
          {"heads", heads},                {"ff", ff},           {"max_len", max_len},
          {"positional", positional}};
}

LMConfig LMConfig::from_json(const json& j) {
  LMConfig c;
  try {
    if (j.contains("variant")) c.variant = variant_from_string(j.at("variant").get<std::string>());
    c.vocab = j.value("vocab", c.vocab);
    c.duration_bins = j.value("duration_bins", c.duration_bins);
    c.pitch_bins = j.value("pitch_bins", c.pitch_bins);
    c.d_model = j.value("d_model", c.d_model);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.ff = j.value("ff", c.ff);
    c.max_len = j.value("max_len", c.max_len);
    c.positional = j.value("positional", c.positional);
  } catch (const json::exception& e) {
    throw ValueError(std::string("LMConfig: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- weights ---------------------------------------------------------------

std::vector<std::pair<std::string, Tensor>> LMWeights::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto put = [&](std::string name, const Tensor& t) {
    if (t.defined()) out.emplace_back(std::move(name), t);
  };
  put("embed.unit", embed.unit);
  put("embed.duration", embed.duration);
  put("embed.pitch", embed.pitch);
  put("embed.position", embed.position);
  for (const auto& L : layers) {
    const std::string p = "layer." + std::to_string(L.index) + ".";
    put(p + "ln1.gamma", L.ln1_gamma);
    put(p + "ln1.beta", L.ln1_beta);
    put(p + "attn.wq", L.wq);
    put(p + "attn.wk", L.wk);
    put(p + "attn.wv", L.wv);
    put(p + "attn.wo", L.wo);
    put(p + "ln2.gamma", L.ln2_gamma);
    put(p + "ln2.beta", L.ln2_beta);
    put(p + "ff.w1", L.ff_w1);
    put(p + "ff.b1", L.ff_b1);
    put(p + "ff.w2", L.ff_w2);
    put(p + "ff.b2", L.ff_b2);
  }
  put("final_ln.gamma", final_gamma);
  put("final_ln.beta", final_beta);
  put("head.unit.w", unit_head_w);
  put("head.unit.b", unit_head_b);
  put("head.duration.w", duration_head_w);
  put("head.duration.b", duration_head_b);
  put("head.pitch.w", pitch_head_w);
  put("head.pitch.b", pitch_head_b);
  return out;
}

LMWeights LMWeights::alias(bool requires_grad) const {
  auto a = [&](const Tensor& t) { return t.defined() ? t.alias(requires_grad) : Tensor(); };
  LMWeights w;
  w.embed = {a(embed.unit), a(embed.duration), a(embed.pitch), a(embed.position)};
  for (const auto& L : layers) {
    w.layers.push_back({L.index, a(L.ln1_gamma), a(L.ln1_beta), a(L.wq), a(L.wk), a(L.wv), a(L.wo),
                        a(L.ln2_gamma), a(L.ln2_beta), a(L.ff_w1), a(L.ff_b1), a(L.ff_w2), a(L.ff_b2)});
  }
  w.final_gamma = a(final_gamma);
  w.final_beta = a(final_beta);
  w.unit_head_w = a(unit_head_w);
  w.unit_head_b = a(unit_head_b);
  w.duration_head_w = a(duration_head_w);
  w.duration_head_b = a(duration_head_b);
  w.pitch_head_w = a(pitch_head_w);
  w.pitch_head_b = a(pitch_head_b);
  return w;
}

std::string SpokenLM::compute_digest() const {
  std::vector<container::NamedTensor> blobs;
  for (const auto& [name, t] : weights.named()) {
    blobs.push_back({name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())});
  }
  return container::digest(blobs);
}

std::string SpokenLM::param_digest() const { return frozen_ ? digest_ : compute_digest(); }

std::size_t SpokenLM::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : weights.named()) n += t.numel();
  return n;
}

void SpokenLM::freeze() {
  for (auto& [name, t] : weights.named()) {
    Tensor handle = t;
    container::round_f32(handle.mutable_data());
  }
  frozen_ = true;
  digest_ = compute_digest();
}

SpokenLM build_lm(const LMConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed, 0, 0x6c6d);
  const std::size_t d = config.d_model;
  auto normal = [&](Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = container::round_f32(rng.normal(0.0, 0.02));
    return Tensor::from(std::move(shape), std::move(v));
  };
  auto fill = [](Shape shape, double value) {
    const std::size_t n = shape_numel(shape);
    return Tensor::from(std::move(shape), std::vector<double>(n, value));
  };

  SpokenLM lm;
  lm.config = config;
  LMWeights& w = lm.weights;
  w.embed.unit = normal({config.vocab, d});
  if (config.variant == Variant::pgslm) {
    w.embed.duration = normal({config.duration_bins, d});
    w.embed.pitch = normal({config.pitch_bins, d});
  }
  w.embed.position = normal({config.max_len, d});
  for (std::size_t j = 0; j < config.layers; ++j) {
    AttentionLayer L;
    L.index = j;
    L.ln1_gamma = fill({d}, 1.0);
    L.ln1_beta = fill({d}, 0.0);
    L.wq = normal({d, d});
    L.wk = normal({d, d});
    L.wv = normal({d, d});
    L.wo = normal({d, d});
    L.ln2_gamma = fill({d}, 1.0);
    L.ln2_beta = fill({d}, 0.0);
    L.ff_w1 = normal({d, config.ff});
    L.ff_b1 = fill({config.ff}, 0.0);
    L.ff_w2 = normal({config.ff, d});
    L.ff_b2 = fill({d}, 0.0);
    w.layers.push_back(std::move(L));
  }
  w.final_gamma = fill({d}, 1.0);
  w.final_beta = fill({d}, 0.0);
  w.unit_head_w = normal({d, config.vocab});
  w.unit_head_b = fill({config.vocab}, 0.0);
  if (config.variant == Variant::pgslm) {
    w.duration_head_w = normal({d, config.duration_bins});
    w.duration_head_b = fill({config.duration_bins}, 0.0);
    w.pitch_head_w = normal({d, config.pitch_bins});
    w.pitch_head_b = fill({config.pitch_bins}, 0.0);
  }
  return lm;
}

// ---- forward -------------------------------------------------------------------

EmbeddedSequence embed(const LMConfig& config, const LMWeights& weights, const datagen::UnitSequence& seq) {
  if (seq.units.empty()) throw ValueError("embed: empty sequence");
  Tensor rows = embedding(weights.embed.unit, seq.units);
  if (config.variant == Variant::pgslm) {
    if (seq.durations.size() != seq.units.size() || seq.pitch.size() != seq.units.size()) {
      throw ShapeError("embed: duration/pitch streams differ in length from units");
    }
    std::vector<std::size_t> dur(seq.durations.size());
    for (std::size_t t = 0; t < dur.size(); ++t) dur[t] = datagen::duration_bin(seq.durations[t]);
    rows = add(rows, embedding(weights.embed.duration, dur));
    rows = add(rows, embedding(weights.embed.pitch, seq.pitch));
  }
  return {rows};
}

EmbeddedSequence embed(const SpokenLM& lm, const datagen::UnitSequence& seq) {
  return embed(lm.config, lm.weights, seq);
}

Tensor input_rows(const SpokenLM& lm, const EmbeddedSequence& x) {
  return add(x.tokens, slice_rows(lm.weights.embed.position, 0, x.size()));
}

ForwardOutput forward(const LMConfig& config, const LMWeights& w, const EmbeddedSequence& x,
                      const ForwardOptions& options) {
  const PromptSet* prompts = options.prompts;
  if (prompts && prompts->length > 0) {
    if (prompts->d_model != config.d_model || prompts->layers != config.layers) {
      throw ShapeError("forward: prompts built for d=" + std::to_string(prompts->d_model) +
                       ", N=" + std::to_string(prompts->layers) + " but model has d=" +
                       std::to_string(config.d_model) + ", N=" + std::to_string(config.layers));
    }
  }
  const bool prompted = prompts && prompts->length > 0;
  const Tensor tokens = prompted ? inject_input(*prompts, x).tokens : x.tokens;
  const std::size_t T = tokens.rows();
  if (T > config.max_len) {
    throw ValueError("forward: sequence length " + std::to_string(T) + " exceeds max_len " +
                     std::to_string(config.max_len));
  }
  Tensor h = add(tokens, slice_rows(w.embed.position, 0, T));
  for (std::size_t j = 0; j < w.layers.size(); ++j) {
    const AttentionLayer& L = w.layers[j];
    if (options.layer_inputs) options.layer_inputs->push_back(h);
    const Tensor a = layer_norm(h, L.ln1_gamma, L.ln1_beta);
    const Tensor attn = prompted ? attention_with_deep_prompts(L, a, prompts->key[j], prompts->value[j], config.heads)
                                 : attention_with_deep_prompts(L, a, Tensor(), Tensor(), config.heads);
    h = add(h, attn);
    const Tensor b = layer_norm(h, L.ln2_gamma, L.ln2_beta);
    const Tensor f = add_row(matmul(gelu(add_row(matmul(b, L.ff_w1), L.ff_b1)), L.ff_w2), L.ff_b2);
    h = add(h, f);
  }
  if (options.readout == Readout::last_position) h = slice_rows(h, T - 1, T);
  const Tensor z = layer_norm(h, w.final_gamma, w.final_beta);

  ForwardOutput out;
  out.unit_logits = add_row(matmul(z, w.unit_head_w), w.unit_head_b);
  if (config.variant == Variant::pgslm) {
    out.duration_logits = add_row(matmul(z, w.duration_head_w), w.duration_head_b);
    out.pitch_logits = add_row(matmul(z, w.pitch_head_w), w.pitch_head_b);
  }
  return out;
}

ForwardOutput forward(const SpokenLM& lm, const EmbeddedSequence& x, const ForwardOptions& options) {
  return forward(lm.config, lm.weights, x, options);
}

Tensor readout_logits(const SpokenLM& lm, const datagen::UnitSequence& seq, const PromptSet* prompts) {
  ForwardOptions opt;
  opt.prompts = prompts;
  opt.readout = Readout::last_position;
  return forward(lm, embed(lm, seq), opt).unit_logits;
}

std::vector<double> next_unit_distribution(const SpokenLM& lm, const datagen::UnitSequence& seq,
                                           const PromptSet* prompts) {
  if (seq.units.empty()) throw ValueError("next_unit_distribution: empty sequence");
  const Tensor p = softmax(readout_logits(lm, seq, prompts).detach());
  return {p.data().begin(), p.data().end()};
}

// ---- pretraining -----------------------------------------------------------------

Tensor sequence_loss(const LMConfig& config, const LMWeights& weights, const datagen::UnitSequence& seq) {
  const std::size_t T = seq.units.size();
  if (T < 2) throw ValueError("sequence_loss: need at least two units");
  const ForwardOutput out = forward(config, weights, embed(config, weights, seq));
  std::vector<std::size_t> next(seq.units.begin() + 1, seq.units.end());
  Tensor loss = cross_entropy(slice_rows(out.unit_logits, 0, T - 1), next);
  if (config.variant == Variant::pgslm) {
    std::vector<std::size_t> dur(T - 1), pit(seq.pitch.begin() + 1, seq.pitch.end());
    for (std::size_t t = 1; t < T; ++t) dur[t - 1] = datagen::duration_bin(seq.durations[t]);
    loss = add(loss, cross_entropy(slice_rows(out.duration_logits, 0, T - 1), dur));
    loss = add(loss, cross_entropy(slice_rows(out.pitch_logits, 0, T - 1), pit));
  }
  return loss;
}

namespace {

struct ExampleGrad {
  double loss = 0.0;
  std::vector<std::vector<double>> grads;
};

ExampleGrad example_grad(const LMConfig& config, const LMWeights& weights, const datagen::UnitSequence& seq) {
  ExampleGrad out;
  const LMWeights leaves = weights.alias(true);
  const auto named = leaves.named();
  out.grads.resize(named.size());
  if (seq.units.size() < 2) {
    for (std::size_t i = 0; i < named.size(); ++i) out.grads[i].assign(named[i].second.numel(), 0.0);
    return out;
  }
  const Tensor loss = sequence_loss(config, leaves, seq);
  backward(loss);
  out.loss = loss.item();
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto g = named[i].second.grad();
    if (g.empty()) {
      out.grads[i].assign(named[i].second.numel(), 0.0);
    } else {
      out.grads[i].assign(g.begin(), g.end());
    }
  }
  return out;
}

}  // namespace

PretrainLog pretrain(SpokenLM& lm, const std::vector<datagen::UnitSequence>& train,
                     const std::vector<datagen::UnitSequence>& valid, const PretrainConfig& cfg) {
  if (lm.frozen()) throw StateError("pretrain: backbone is already frozen");
  if (train.empty()) throw ValueError("pretrain: empty training set");
  if (cfg.batch == 0) throw ValueError("pretrain: batch must be positive");

  PretrainLog log;
  log.valid_ppl_before = valid.empty() ? 0.0 : perplexity(lm, valid);

  auto named = lm.weights.named();
  std::vector<Tensor> params;
  for (auto& [name, t] : named) params.push_back(t);
  AdamState adam(AdamConfig{cfg.lr});

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  bool first_batch = true;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(cfg.seed, epoch, 0x7074);
    rng.shuffle(order);
    std::vector<double> losses(train.size(), 0.0);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t n = std::min(cfg.batch, order.size() - start);
      std::vector<ExampleGrad> per(n);
      if (cfg.exec == kernels::Execution::parallel) {
#pragma omp parallel for schedule(dynamic, 1)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
          per[i] = example_grad(lm.config, lm.weights, train[order[start + i]]);
        }
      } else {
        for (std::size_t i = 0; i < n; ++i) per[i] = example_grad(lm.config, lm.weights, train[order[start + i]]);
      }
      // Fixed-order reduction: example 0, 1, ... of the batch.
      std::vector<std::vector<double>> grads(params.size());
      for (std::size_t p = 0; p < params.size(); ++p) grads[p].assign(params[p].numel(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        losses[order[start + i]] = per[i].loss;
        batch_loss += per[i].loss;
        for (std::size_t p = 0; p < params.size(); ++p) {
          for (std::size_t q = 0; q < grads[p].size(); ++q) grads[p][q] += per[i].grads[p][q];
        }
      }
      const double inv = 1.0 / static_cast<double>(n);
      for (auto& g : grads) {
        for (double& v : g) v *= inv;
      }
      if (first_batch) {
        log.initial_loss = batch_loss * inv;
        first_batch = false;
      }
      adam_step(params, grads, adam);
    }
    double total = 0.0;
    for (double l : losses) total += l;
    log.epoch_loss.push_back(total / static_cast<double>(train.size()));
  }
  lm.freeze();
  log.valid_ppl_after = valid.empty() ? 0.0 : perplexity(lm, valid);
  return log;
}

double perplexity(const SpokenLM& lm, const std::vector<datagen::UnitSequence>& data) {
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& seq : data) {
    const std::size_t T = seq.units.size();
    if (T < 2) continue;
    const ForwardOutput out = forward(lm, embed(lm, seq));
    std::vector<std::size_t> next(seq.units.begin() + 1, seq.units.end());
    nll += cross_entropy(slice_rows(out.unit_logits, 0, T - 1), next).item() * static_cast<double>(T - 1);
    count += T - 1;
  }
  if (count == 0) throw ValueError("perplexity: no predictable positions");
  return std::exp(nll / static_cast<double>(count));
}

double next_unit_accuracy(const SpokenLM& lm, const std::vector<datagen::UnitSequence>& data) {
  std::size_t hit = 0, count = 0;
  for (const auto& seq : data) {
    const std::size_t T = seq.units.size();
    if (T < 2) continue;
    const Tensor logits = forward(lm, embed(lm, seq)).unit_logits;
    const std::size_t V = logits.cols();
    for (std::size_t t = 0; t + 1 < T; ++t) {
      const auto row = logits.data().subspan(t * V, V);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      hit += best == seq.units[t + 1];
      ++count;
    }
  }
  return count ? static_cast<double>(hit) / static_cast<double>(count) : 0.0;
}

// ---- checkpoints -----------------------------------------------------------------

void save_lm(const SpokenLM& lm, const std::filesystem::path& path, bool allow_unfrozen) {
  if (!lm.frozen() && !allow_unfrozen) throw StateError("save_lm: backbone is not frozen");
  std::vector<container::NamedTensor> blobs;
  for (const auto& [name, t] : lm.weights.named()) {
    blobs.push_back({name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())});
  }
  nlohmann::ordered_json j;
  j["format_version"] = container::kFormatVersion;
  j["kind"] = "backbone";
  j["config"] = lm.config.to_json();
  j["frozen"] = lm.frozen();
  j["param_digest"] = container::digest(blobs);
  j["tensors"] = container::tensors_to_json(blobs);
  container::write_text(path, j.dump() + "\n");
}

SpokenLM load_lm(const std::filesystem::path& path) {
  const json j = container::read_json(path);
  if (!j.is_object() || !j.contains("format_version") || !j.contains("tensors") || !j.contains("config")) {
    throw FormatError(path.string() + ": not a backbone checkpoint");
  }
  if (j.at("format_version") != container::kFormatVersion) {
    throw FormatError(path.string() + ": unsupported format_version " + j.at("format_version").dump());
  }
  LMConfig config;
  try {
    config = LMConfig::from_json(j.at("config"));
  } catch (const ValueError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  const auto blobs = container::tensors_from_json(j.at("tensors"));
  SpokenLM lm = build_lm(config, 0);
  for (auto& [name, t] : lm.weights.named()) {
    const auto& blob = container::find(blobs, name);
    if (blob.shape != t.shape()) {
      throw FormatError(path.string() + ": tensor '" + name + "' has shape " + shape_str(blob.shape) +
                        ", expected " + shape_str(t.shape()));
    }
    Tensor handle = t;
    auto dst = handle.mutable_data();
    std::copy(blob.data.begin(), blob.data.end(), dst.begin());
  }
  const std::string recorded = j.value("param_digest", std::string());
  const std::string actual = lm.compute_digest();
  if (recorded != actual) {
    throw FormatError(path.string() + ": param_digest mismatch (recorded " + recorded + ", computed " + actual + ")");
  }
  lm.frozen_ = j.value("frozen", false);
  if (lm.frozen_) lm.digest_ = actual;
  return lm;
}

}  // namespace unitprompt
