#include "unitprompt/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "unitprompt/container.hpp"
#include "unitprompt/error.hpp"
#include "unitprompt/random.hpp"

namespace unitprompt::datagen {

using container::json;

std::string_view to_string(Channel c) {
  switch (c) {
    case Channel::content:
      return "content";
    case Channel::prosody:
      return "prosody";
    case Channel::mixed:
      return "mixed";
  }
  return "?";
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::valid:
      return "valid";
    case Split::test:
      return "test";
  }
  return "?";
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw ValueError("unknown split '" + std::string(s) + "'");
}

std::size_t duration_bin(std::size_t frames) { return std::clamp<std::size_t>(frames, 1, kDurationBins) - 1; }

// ---- task specs ------------------------------------------------------------

void TaskSpec::validate() const {
  auto fail = [this](const std::string& why) { throw ValueError("task '" + name + "': " + why); };
  if (num_classes < 2) fail("needs at least 2 classes");
  if (vocab < 2 || vocab < num_classes) fail("vocab must be >= max(2, num_classes)");
  if (min_segments < 1 || min_segments > max_segments) fail("bad segment range");
  if (min_segment_frames < 1 || min_segment_frames > max_segment_frames) fail("bad frames-per-segment range");
  if (feature_dim < 1 || latent_states < 1) fail("empty feature or latent space");
  if (state_means.size() != latent_states * feature_dim) fail("state_means has wrong size");
  if (transitions.empty()) fail("no transition matrices");
  for (const auto& t : transitions) {
    if (t.size() != latent_states * latent_states) fail("transition matrix has wrong size");
    for (std::size_t r = 0; r < latent_states; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < latent_states; ++c) {
        const double p = t[r * latent_states + c];
        if (!(p >= 0.0)) fail("negative transition probability");
        s += p;
      }
      if (std::abs(s - 1.0) > 1e-9) fail("transition row does not sum to 1");
    }
  }
  if (chain_of_class.size() != num_classes) fail("chain_of_class must list every class");
  for (auto c : chain_of_class) {
    if (c >= transitions.size()) fail("chain_of_class refers to a missing chain");
  }
  if (!contour_of_class.empty() && contour_of_class.size() != num_classes) fail("contour_of_class size");
  const bool shared_chain =
      std::all_of(chain_of_class.begin(), chain_of_class.end(), [&](auto c) { return c == chain_of_class[0]; });
  if (channel == Channel::prosody && (!shared_chain || contour_of_class.empty())) {
    fail("prosody tasks need one shared chain and per-class contours");
  }
  if (channel == Channel::content && !contour_of_class.empty()) fail("content tasks draw contours independently");
  if (!(unvoiced_prob >= 0.0 && unvoiced_prob < 1.0)) fail("unvoiced_prob outside [0, 1)");
  if (!(frame_period > 0.0)) fail("frame_period must be positive");
}

namespace {

std::vector<double> random_means(Rng& rng, std::size_t states, std::size_t dim, double spread) {
  std::vector<double> means(states * dim);
  for (double& m : means) m = rng.normal(0.0, spread);
  return means;
}

// Mass `in_prob` on the states of `preferred`, the rest spread over the
// others; no self transitions.
std::vector<double> preference_chain(Rng& rng, std::size_t states, const std::vector<bool>& preferred,
                                     double in_prob) {
  const auto n_pref = static_cast<double>(std::count(preferred.begin(), preferred.end(), true));
  const double n_other = static_cast<double>(states) - n_pref;
  std::vector<double> t(states * states, 0.0);
  for (std::size_t r = 0; r < states; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < states; ++c) {
      if (c == r) continue;
      const double base = preferred[c] ? in_prob / n_pref : (n_other > 0 ? (1.0 - in_prob) / n_other : 0.0);
      t[r * states + c] = base * rng.uniform(0.5, 1.5);
      total += t[r * states + c];
    }
    for (std::size_t c = 0; c < states; ++c) t[r * states + c] /= total;
  }
  return t;
}

std::vector<double> shared_chain(Rng& rng, std::size_t states) {
  return preference_chain(rng, states, std::vector<bool>(states, true), 1.0);
}

}  // namespace

std::vector<std::string> task_names() { return {"content2", "content4", "prosody2", "prosody4", "mixed4", "cycle"}; }

TaskSpec make_task(std::string_view name, std::uint64_t seed) {
  TaskSpec spec;
  spec.name = std::string(name);
  spec.seed = seed;
  Rng rng(seed, 0, 0x7a5c);
  const std::size_t L = spec.latent_states;
  spec.state_means = random_means(rng, L, spec.feature_dim, 1.5);

  auto class_sets = [&](std::size_t groups) {
    for (std::size_t g = 0; g < groups; ++g) {
      std::vector<bool> pref(L);
      for (std::size_t s = 0; s < L; ++s) pref[s] = s % groups == g;
      spec.transitions.push_back(preference_chain(rng, L, pref, 0.85));
    }
  };

  if (name == "content2" || name == "content4") {
    spec.num_classes = name == "content2" ? 2 : 4;
    spec.channel = Channel::content;
    class_sets(spec.num_classes);
    for (std::size_t c = 0; c < spec.num_classes; ++c) spec.chain_of_class.push_back(c);
  } else if (name == "prosody2" || name == "prosody4") {
    spec.num_classes = name == "prosody2" ? 2 : 4;
    spec.channel = Channel::prosody;
    spec.transitions.push_back(shared_chain(rng, L));
    spec.chain_of_class.assign(spec.num_classes, 0);
    const Contour all[] = {Contour::rising, Contour::falling, Contour::flat, Contour::oscillating};
    spec.contour_of_class.assign(all, all + spec.num_classes);
  } else if (name == "mixed4") {
    spec.num_classes = 4;
    spec.channel = Channel::mixed;
    class_sets(2);
    spec.chain_of_class = {0, 0, 1, 1};
    spec.contour_of_class = {Contour::rising, Contour::falling, Contour::rising, Contour::falling};
  } else if (name == "cycle") {
    // Deterministic state cycle shared by both classes; an LM sanity corpus.
    spec.num_classes = 2;
    spec.channel = Channel::content;
    spec.frame_noise = 0.05;
    spec.min_segment_frames = 1;
    spec.max_segment_frames = 3;
    std::vector<double> t(L * L, 0.0);
    for (std::size_t s = 0; s < L; ++s) t[s * L + (s + 1) % L] = 1.0;
    spec.transitions.push_back(std::move(t));
    spec.chain_of_class = {0, 0};
  } else {
    throw ValueError("unknown task '" + std::string(name) + "'");
  }
  spec.validate();
  return spec;
}

// ---- corpus generation -------------------------------------------------------

namespace {

double contour_value(Contour c, double x, double amplitude) {
  switch (c) {
    case Contour::rising:
      return amplitude * (2.0 * x - 1.0);
    case Contour::falling:
      return -amplitude * (2.0 * x - 1.0);
    case Contour::flat:
      return 0.0;
    case Contour::oscillating:
      return amplitude * std::sin(4.0 * M_PI * x);
  }
  return 0.0;
}

LabeledFrames generate_example(const TaskSpec& spec, std::size_t label, std::size_t index) {
  const std::size_t L = spec.latent_states, D = spec.feature_dim;
  LabeledFrames ex;
  ex.label = label;
  FeatureFrames& f = ex.features;
  f.dim = D;
  f.frame_period = spec.frame_period;

  Rng units(spec.seed, index, 1);
  const auto& chain = spec.transitions[spec.chain_of_class[label]];
  const std::size_t segments = spec.min_segments + units.below(spec.max_segments - spec.min_segments + 1);
  std::size_t state = units.below(L);
  std::vector<double> row(L);
  for (std::size_t seg = 0; seg < segments; ++seg) {
    if (seg > 0) {
      std::copy_n(chain.begin() + static_cast<std::ptrdiff_t>(state * L), L, row.begin());
      state = units.categorical(row);
    }
    const std::size_t len =
        spec.min_segment_frames + units.below(spec.max_segment_frames - spec.min_segment_frames + 1);
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t q = 0; q < D; ++q) {
        f.frames.push_back(spec.state_means[state * D + q] + units.normal(0.0, spec.frame_noise));
      }
    }
  }

  Rng prosody(spec.seed, index, 2);
  const std::size_t T = f.num_frames();
  const Contour contour =
      spec.contour_of_class.empty() ? static_cast<Contour>(prosody.below(4)) : spec.contour_of_class[label];
  const double base = spec.pitch_base + prosody.normal(0.0, spec.pitch_base_jitter);
  f.pitch.resize(T);
  f.voiced.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double x = T > 1 ? static_cast<double>(t) / static_cast<double>(T - 1) : 0.5;
    const double value = base + contour_value(contour, x, spec.pitch_amplitude) + prosody.normal(0.0, spec.pitch_noise);
    const bool voiced = prosody.uniform() >= spec.unvoiced_prob;
    f.voiced[t] = voiced ? 1 : 0;
    f.pitch[t] = voiced ? value : kUnvoiced;
  }
  return ex;
}

}  // namespace

std::vector<LabeledFrames> generate_corpus(const TaskSpec& spec, std::size_t n_per_class, kernels::Execution exec) {
  spec.validate();
  if (n_per_class < 1) throw ValueError("generate_corpus: n_per_class must be >= 1");
  const std::size_t total = spec.num_classes * n_per_class;
  std::vector<LabeledFrames> corpus(total);
  if (exec == kernels::Execution::parallel) {
    const auto n = static_cast<std::ptrdiff_t>(total);
#pragma omp parallel for schedule(dynamic, 8)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      corpus[idx] = generate_example(spec, idx / n_per_class, idx);
    }
  } else {
    for (std::size_t i = 0; i < total; ++i) corpus[i] = generate_example(spec, i / n_per_class, i);
  }
  return corpus;
}

// ---- k-means -------------------------------------------------------------------

Codebook kmeans_fit(std::span<const double> rows, std::size_t dim, std::size_t k, std::size_t max_iters,
                    std::uint64_t seed) {
  if (dim == 0 || rows.size() % dim != 0) throw ShapeError("kmeans_fit: rows are not a whole number of vectors");
  const std::size_t n = rows.size() / dim;
  if (k < 2) throw ValueError("kmeans_fit: k must be >= 2");
  if (n < k) {
    throw ValueError("kmeans_fit: " + std::to_string(n) + " rows for " + std::to_string(k) + " clusters");
  }
  Rng rng(seed, 0, 0x6b6d);
  Codebook cb;
  cb.k = k;
  cb.dim = dim;
  cb.centroids.reserve(k * dim);

  // k-means++ seeding.
  const std::size_t first = rng.below(n);
  cb.centroids.insert(cb.centroids.end(), rows.begin() + first * dim, rows.begin() + (first + 1) * dim);
  std::vector<double> d2(n);
  std::vector<std::size_t> ids(n);
  kernels::nearest_centroid(rows, cb.centroids, dim, ids, d2);
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    if (!(total > 0.0)) throw ValueError("kmeans_fit: fewer distinct rows than clusters");
    const std::size_t pick = rng.categorical(d2);
    cb.centroids.insert(cb.centroids.end(), rows.begin() + pick * dim, rows.begin() + (pick + 1) * dim);
    const std::span<const double> newest(cb.centroids.data() + c * dim, dim);
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0.0;
      for (std::size_t q = 0; q < dim; ++q) {
        const double diff = rows[r * dim + q] - newest[q];
        s += diff * diff;
      }
      d2[r] = std::min(d2[r], s);
    }
  }

  auto assign = [&](std::vector<std::size_t>& out) {
    kernels::nearest_centroid(rows, cb.centroids, dim, out, d2);
    double inertia = 0.0;
    for (double v : d2) inertia += v;
    cb.inertia_trace.push_back(inertia);
  };

  assign(ids);
  std::vector<std::size_t> next(n);
  std::vector<double> sums(k * dim);
  std::vector<std::size_t> counts(k);
  for (std::size_t it = 0; it < max_iters; ++it) {
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t r = 0; r < n; ++r) {
      ++counts[ids[r]];
      for (std::size_t q = 0; q < dim; ++q) sums[ids[r] * dim + q] += rows[r * dim + q];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its centroid
      for (std::size_t q = 0; q < dim; ++q) {
        cb.centroids[c * dim + q] = sums[c * dim + q] / static_cast<double>(counts[c]);
      }
    }
    ++cb.iterations;
    assign(next);
    const bool changed = next != ids;
    ids.swap(next);
    if (!changed) break;
  }
  cb.inertia = cb.inertia_trace.back();
  return cb;
}

std::vector<std::size_t> quantize_rows(std::span<const double> rows, std::size_t dim, const Codebook& cb) {
  if (dim != cb.dim) {
    throw ShapeError("quantize: feature dim " + std::to_string(dim) + " but codebook dim " + std::to_string(cb.dim));
  }
  const std::size_t n = rows.size() / dim;
  std::vector<std::size_t> ids(n);
  std::vector<double> d2(n);
  kernels::nearest_centroid(rows, cb.centroids, dim, ids, d2);
  return ids;
}

std::vector<std::size_t> quantize(const FeatureFrames& frames, const Codebook& cb) {
  return quantize_rows(frames.frames, frames.dim, cb);
}

void save_codebook(const Codebook& cb, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["k"] = cb.k;
  j["dim"] = cb.dim;
  j["centroids"] = cb.centroids;
  container::write_text(path, j.dump() + "\n");
}

Codebook load_codebook(const std::filesystem::path& path) {
  const json j = container::read_json(path);
  Codebook cb;
  try {
    cb.k = j.at("k").get<std::size_t>();
    cb.dim = j.at("dim").get<std::size_t>();
    cb.centroids = j.at("centroids").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": malformed codebook (" + e.what() + ")");
  }
  if (cb.centroids.size() != cb.k * cb.dim) throw FormatError(path.string() + ": centroid count mismatch");
  return cb;
}

// ---- dedup -------------------------------------------------------------------------

std::size_t PitchBinning::bin(double log_f0) const {
  const double x = (log_f0 - lo) / (hi - lo) * static_cast<double>(kVoicedPitchBins);
  if (!(x > 0.0)) return 0;
  return std::min(static_cast<std::size_t>(x), kVoicedPitchBins - 1);
}

PitchBinning fit_pitch_binning(const std::vector<LabeledFrames>& corpus) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& ex : corpus) {
    for (std::size_t t = 0; t < ex.features.pitch.size(); ++t) {
      if (!ex.features.voiced[t]) continue;
      lo = std::min(lo, ex.features.pitch[t]);
      hi = std::max(hi, ex.features.pitch[t]);
    }
  }
  if (!std::isfinite(lo)) return {0.0, 1.0};
  if (!(hi > lo)) hi = lo + 1.0;
  return {lo, hi};
}

UnitSequence dedup(std::span<const std::size_t> frame_units, std::span<const double> pitch,
                   std::span<const std::uint8_t> voiced, const PitchBinning& binning) {
  if (frame_units.empty()) throw ValueError("dedup: empty unit sequence");
  if (pitch.size() != frame_units.size() || voiced.size() != frame_units.size()) {
    throw ShapeError("dedup: pitch track length differs from unit sequence");
  }
  UnitSequence seq;
  std::size_t start = 0;
  while (start < frame_units.size()) {
    std::size_t end = start + 1;
    while (end < frame_units.size() && frame_units[end] == frame_units[start]) ++end;
    double total = 0.0;
    std::size_t n_voiced = 0;
    for (std::size_t t = start; t < end; ++t) {
      if (voiced[t]) {
        total += pitch[t];
        ++n_voiced;
      }
    }
    seq.units.push_back(frame_units[start]);
    seq.durations.push_back(end - start);
    seq.pitch.push_back(n_voiced ? binning.bin(total / static_cast<double>(n_voiced)) : kUnvoicedBin);
    start = end;
  }
  return seq;
}

UnitSequence dedup(std::span<const std::size_t> frame_units) {
  const std::vector<double> pitch(frame_units.size(), kUnvoiced);
  const std::vector<std::uint8_t> voiced(frame_units.size(), 0);
  return dedup(frame_units, pitch, voiced, PitchBinning{});
}

std::vector<std::size_t> expand(const UnitSequence& seq) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < seq.units.size(); ++i) out.insert(out.end(), seq.durations[i], seq.units[i]);
  return out;
}

// ---- splits and files --------------------------------------------------------------

void assign_splits(std::vector<UnitSequence>& sequences, const SplitRatios& ratios, std::uint64_t seed) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0)) throw ValueError("split ratios must all be positive");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValueError("split ratios must sum to 1");

  const std::size_t C = num_classes(sequences);
  std::vector<std::vector<std::size_t>> by_class(C);
  for (std::size_t i = 0; i < sequences.size(); ++i) by_class[sequences[i].label].push_back(i);
  for (std::size_t c = 0; c < C; ++c) {
    auto& idx = by_class[c];
    const std::size_t n = idx.size();
    if (n < ratios.size()) {
      throw ValueError("class " + std::to_string(c) + " has " + std::to_string(n) + " examples for 3 splits");
    }
    Rng rng(seed, c, 3);
    rng.shuffle(idx);
    auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios[0]));
    auto n_valid = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios[1]));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 2);
    n_valid = std::clamp<std::size_t>(n_valid, 1, n - n_train - 1);
    for (std::size_t j = 0; j < n; ++j) {
      sequences[idx[j]].split = j < n_train ? Split::train : (j < n_train + n_valid ? Split::valid : Split::test);
    }
  }
}

std::string dataset_ndjson(const std::vector<UnitSequence>& sequences) {
  std::string out;
  for (const auto& s : sequences) {
    nlohmann::ordered_json j;
    j["units"] = s.units;
    j["durations"] = s.durations;
    j["pitch"] = s.pitch;
    j["label"] = s.label;
    j["split"] = to_string(s.split);
    out += j.dump();
    out += '\n';
  }
  return out;
}

void emit_dataset(std::vector<UnitSequence>& sequences, const SplitRatios& ratios, std::uint64_t seed,
                  const std::filesystem::path& path) {
  assign_splits(sequences, ratios, seed);
  container::write_text(path, dataset_ndjson(sequences));
}

std::vector<UnitSequence> read_dataset(const std::filesystem::path& path) {
  const std::string text = container::read_text(path);
  std::istringstream in(text);
  std::string line;
  std::vector<UnitSequence> out;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto where = [&] { return path.string() + ":" + std::to_string(lineno); };
    UnitSequence s;
    try {
      const json j = json::parse(line);
      s.units = j.at("units").get<std::vector<std::size_t>>();
      s.durations = j.at("durations").get<std::vector<std::size_t>>();
      s.pitch = j.at("pitch").get<std::vector<std::size_t>>();
      s.label = j.at("label").get<std::size_t>();
      s.split = split_from_string(j.at("split").get<std::string>());
    } catch (const json::exception& e) {
      throw FormatError(where() + ": " + e.what());
    } catch (const ValueError& e) {
      throw FormatError(where() + ": " + e.what());
    }
    if (s.units.empty() || s.durations.size() != s.units.size() || s.pitch.size() != s.units.size()) {
      throw FormatError(where() + ": stream lengths differ or are empty");
    }
    if (std::any_of(s.durations.begin(), s.durations.end(), [](auto d) { return d == 0; })) {
      throw FormatError(where() + ": zero duration");
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw FormatError(path.string() + ": no examples");
  return out;
}

std::vector<UnitSequence> select_split(const std::vector<UnitSequence>& data, Split split) {
  std::vector<UnitSequence> out;
  for (const auto& s : data) {
    if (s.split == split) out.push_back(s);
  }
  return out;
}

std::size_t num_classes(const std::vector<UnitSequence>& data) {
  std::size_t c = 0;
  for (const auto& s : data) c = std::max(c, s.label + 1);
  return c;
}

BuiltDataset build_dataset(const TaskSpec& spec, std::size_t n_per_class, const SplitRatios& ratios,
                           std::size_t max_fit_rows, std::size_t kmeans_iters) {
  const auto corpus = generate_corpus(spec, n_per_class);
  const std::size_t D = spec.feature_dim;
  std::size_t total_frames = 0;
  for (const auto& ex : corpus) total_frames += ex.features.num_frames();
  const std::size_t stride = std::max<std::size_t>(1, (total_frames + max_fit_rows - 1) / max_fit_rows);

  std::vector<double> pool;
  std::size_t global = 0;
  for (const auto& ex : corpus) {
    for (std::size_t t = 0; t < ex.features.num_frames(); ++t, ++global) {
      if (global % stride != 0) continue;
      pool.insert(pool.end(), ex.features.frames.begin() + t * D, ex.features.frames.begin() + (t + 1) * D);
    }
  }

  BuiltDataset out;
  out.codebook = kmeans_fit(pool, D, spec.vocab, kmeans_iters, mix_seed(spec.seed, 4));
  out.pitch_binning = fit_pitch_binning(corpus);
  out.sequences.reserve(corpus.size());
  for (const auto& ex : corpus) {
    const auto ids = quantize(ex.features, out.codebook);
    UnitSequence s = dedup(ids, ex.features.pitch, ex.features.voiced, out.pitch_binning);
    s.label = ex.label;
    out.sequences.push_back(std::move(s));
  }
  assign_splits(out.sequences, ratios, spec.seed);
  return out;
}

}  // namespace unitprompt::datagen
