#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace unitprompt {

enum class Metric { acc, f1, eer };

std::string_view to_string(Metric m);
Metric metric_from_string(std::string_view s);

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels);

// Unweighted mean of per-class F1. A class absent from both predictions and
// labels contributes 0.
double macro_f1(std::span<const std::size_t> preds, std::span<const std::size_t> labels, std::size_t classes);

// confusion[label][pred]
std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const std::size_t> preds,
                                                       std::span<const std::size_t> labels, std::size_t classes);

// Equal error rate for positive-class scores and binary labels (1 = positive).
// A score >= threshold is accepted. Thresholds are the distinct scores; the one
// minimizing |FAR - FRR| wins (lowest on ties) and (FAR + FRR) / 2 is returned.
double eer(std::span<const double> scores, std::span<const std::size_t> labels);

}  // namespace unitprompt
