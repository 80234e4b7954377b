#pragma once

// Synthetic discrete-unit corpora.
//
// Feature frames are emitted by latent Markov chains (content channel) with
// an independent log-F0 track shaped by a contour family (prosody channel).
// The frames are clustered with k-means, quantized to unit ids, and
// run-length collapsed into unit / duration / pitch-bin streams.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "unitprompt/kernels.hpp"

namespace unitprompt::datagen {

enum class Channel { content, prosody, mixed };
enum class Split { train, valid, test };
enum class Contour { rising, falling, flat, oscillating };

std::string_view to_string(Channel c);
std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

// Pitch value stored on unvoiced frames.
inline constexpr double kUnvoiced = -1.0;
inline constexpr std::size_t kDurationBins = 32;
// Voiced pitch bins; one extra id marks unvoiced-only runs.
inline constexpr std::size_t kVoicedPitchBins = 32;
inline constexpr std::size_t kUnvoicedBin = kVoicedPitchBins;
inline constexpr std::size_t kPitchBins = kVoicedPitchBins + 1;

// Duration in frames -> embedding row, clipped to [1, 32].
std::size_t duration_bin(std::size_t frames);

struct FeatureFrames {
  std::size_t dim = 0;
  std::vector<double> frames;  // num_frames x dim, row-major
  double frame_period = 0.02;
  std::vector<double> pitch;  // log-F0, kUnvoiced where !voiced
  std::vector<std::uint8_t> voiced;

  std::size_t num_frames() const { return dim ? frames.size() / dim : 0; }
};

struct LabeledFrames {
  FeatureFrames features;
  std::size_t label = 0;
};

struct UnitSequence {
  std::vector<std::size_t> units;
  std::vector<std::size_t> durations;
  std::vector<std::size_t> pitch;
  std::size_t label = 0;
  Split split = Split::train;

  std::size_t size() const { return units.size(); }
};

struct TaskSpec {
  std::string name;
  std::size_t num_classes = 2;
  std::size_t vocab = 100;
  Channel channel = Channel::content;
  std::size_t min_segments = 10;
  std::size_t max_segments = 16;
  std::size_t min_segment_frames = 2;
  std::size_t max_segment_frames = 5;
  std::size_t feature_dim = 16;
  double frame_period = 0.02;
  double frame_noise = 0.25;
  // Latent state emission means, states x feature_dim.
  std::size_t latent_states = 100;
  std::vector<double> state_means;
  // Row-stochastic latent transition matrices: one per class when the
  // content channel is discriminative, a single shared one otherwise.
  std::vector<std::vector<double>> transitions;
  // transitions[chain_of_class[c]] drives class c.
  std::vector<std::size_t> chain_of_class;
  // Contour family per class; empty means drawn independently of the class.
  std::vector<Contour> contour_of_class;
  double pitch_base = 4.787;  // log(120 Hz)
  double pitch_base_jitter = 0.05;
  double pitch_amplitude = 0.4;
  double pitch_noise = 0.03;
  double unvoiced_prob = 0.1;
  std::uint64_t seed = 0;

  // Throws ValueError when the invariants do not hold.
  void validate() const;
};

// Registered tasks: content2, content4, prosody2, prosody4, mixed4, cycle.
std::vector<std::string> task_names();
// Throws ValueError for unknown names.
TaskSpec make_task(std::string_view name, std::uint64_t seed);

// Example i of class c has index c * n_per_class + i and its own random
// stream, so both execution modes produce identical corpora.
std::vector<LabeledFrames> generate_corpus(const TaskSpec& spec, std::size_t n_per_class,
                                           kernels::Execution exec = kernels::Execution::parallel);

struct Codebook {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<double> centroids;  // k x dim
  double inertia = 0.0;
  std::vector<double> inertia_trace;  // after each assignment pass
  std::size_t iterations = 0;
};

// Lloyd iterations from k-means++ seeds. Stops at max_iters or when no
// assignment changes.
Codebook kmeans_fit(std::span<const double> rows, std::size_t dim, std::size_t k, std::size_t max_iters,
                    std::uint64_t seed);
std::vector<std::size_t> quantize(const FeatureFrames& frames, const Codebook& cb);
std::vector<std::size_t> quantize_rows(std::span<const double> rows, std::size_t dim, const Codebook& cb);

void save_codebook(const Codebook& cb, const std::filesystem::path& path);
Codebook load_codebook(const std::filesystem::path& path);

struct PitchBinning {
  double lo = 0.0;
  double hi = 1.0;
  std::size_t bin(double log_f0) const;
};
// Equal-width bins over the voiced range observed in the corpus.
PitchBinning fit_pitch_binning(const std::vector<LabeledFrames>& corpus);

UnitSequence dedup(std::span<const std::size_t> frame_units, std::span<const double> pitch,
                   std::span<const std::uint8_t> voiced, const PitchBinning& binning);
// Unit/duration streams only; every run gets the unvoiced pitch bin.
UnitSequence dedup(std::span<const std::size_t> frame_units);
std::vector<std::size_t> expand(const UnitSequence& seq);

using SplitRatios = std::array<double, 3>;

// Stratified, seeded split assignment. Each class is shuffled on its own
// stream and cut at round(n * train), round(n * valid); every class lands in
// every split.
void assign_splits(std::vector<UnitSequence>& sequences, const SplitRatios& ratios, std::uint64_t seed);
std::string dataset_ndjson(const std::vector<UnitSequence>& sequences);
void emit_dataset(std::vector<UnitSequence>& sequences, const SplitRatios& ratios, std::uint64_t seed,
                  const std::filesystem::path& path);
std::vector<UnitSequence> read_dataset(const std::filesystem::path& path);
std::vector<UnitSequence> select_split(const std::vector<UnitSequence>& data, Split split);
std::size_t num_classes(const std::vector<UnitSequence>& data);

struct BuiltDataset {
  std::vector<UnitSequence> sequences;
  Codebook codebook;
  PitchBinning pitch_binning;
};

// generate -> k-means (on at most max_fit_rows evenly strided frames) ->
// quantize -> dedup -> split.
BuiltDataset build_dataset(const TaskSpec& spec, std::size_t n_per_class, const SplitRatios& ratios,
                           std::size_t max_fit_rows = 20000, std::size_t kmeans_iters = 50);

}  // namespace unitprompt::datagen
