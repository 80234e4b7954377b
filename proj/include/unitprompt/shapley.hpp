#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "unitprompt/verbalizer.hpp"

namespace unitprompt {

struct BackgroundSummary {
  std::vector<double> mean;
  std::size_t n = 0;
};

BackgroundSummary summarize_background(const std::vector<std::vector<double>>& rows);

struct ShapExplanation {
  std::size_t datapoint = 0;
  std::size_t class_id = 0;
  std::vector<double> phi;
  std::vector<double> feature_values;
  double base_value = 0.0;
};

// Exact interventional Shapley values of a linear verbalizer's class score.
ShapExplanation linear_shap(const LearnableVerbalizer& v, std::span<const double> x, const BackgroundSummary& bg,
                            std::size_t class_id, std::size_t datapoint = 0);

using FeatureFn = std::function<double(std::span<const double>)>;

// Coalition enumeration; features outside a coalition take their background
// value. n <= 20.
std::vector<double> brute_force_shapley(const FeatureFn& f, std::span<const double> x, std::span<const double> mu);

struct RankedUnit {
  std::size_t unit = 0;
  double mean_abs_phi = 0.0;
  std::vector<double> phi;             // one per explanation
  std::vector<double> feature_values;  // one per explanation
  std::vector<std::size_t> datapoints;
};

struct Ranking {
  std::size_t class_id = 0;
  std::vector<RankedUnit> units;  // descending mean |phi|, ties to lower unit id
};

// Top min(k, V) units for `class_id`.
Ranking rank_units(const std::vector<ShapExplanation>& explanations, std::size_t class_id, std::size_t k);

enum class ExportFormat { ndjson, svg };
ExportFormat export_format_from_string(std::string_view s);

std::string beeswarm_ndjson(const Ranking& r);
std::string beeswarm_svg(const Ranking& r);
void export_beeswarm(const Ranking& r, const std::filesystem::path& path, ExportFormat format);

// overlap[a][b] = |top-k(a) ∩ top-k(b)|.
std::vector<std::vector<std::size_t>> cross_run_overlap(const std::vector<Ranking>& runs, std::size_t k);

}  // namespace unitprompt
