#include "unitprompt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "unitprompt/error.hpp"

namespace unitprompt {

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::acc:
      return "acc";
    case Metric::f1:
      return "f1";
    case Metric::eer:
      return "eer";
  }
  return "?";
}

Metric metric_from_string(std::string_view s) {
  if (s == "acc") return Metric::acc;
  if (s == "f1") return Metric::f1;
  if (s == "eer") return Metric::eer;
  throw ValueError("unknown metric '" + std::string(s) + "'");
}

namespace {
void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": " + std::to_string(a) + " predictions vs " + std::to_string(b) + " labels");
  }
}
}  // namespace

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels) {
  check_lengths(preds.size(), labels.size(), "accuracy");
  if (preds.empty()) throw ValueError("accuracy: empty input");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const std::size_t> preds,
                                                       std::span<const std::size_t> labels, std::size_t classes) {
  check_lengths(preds.size(), labels.size(), "confusion_matrix");
  std::vector<std::vector<std::size_t>> m(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] >= classes || preds[i] >= classes) {
      throw ValueError("confusion_matrix: class id outside [0, " + std::to_string(classes) + ")");
    }
    ++m[labels[i]][preds[i]];
  }
  return m;
}

double macro_f1(std::span<const std::size_t> preds, std::span<const std::size_t> labels, std::size_t classes) {
  check_lengths(preds.size(), labels.size(), "macro_f1");
  if (classes == 0) throw ValueError("macro_f1: zero classes");
  const auto m = confusion_matrix(preds, labels, classes);
  double total = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t tp = m[c][c], fp = 0, fn = 0;
    for (std::size_t o = 0; o < classes; ++o) {
      if (o == c) continue;
      fp += m[o][c];
      fn += m[c][o];
    }
    const std::size_t denom = 2 * tp + fp + fn;
    total += denom ? 2.0 * static_cast<double>(tp) / static_cast<double>(denom) : 0.0;
  }
  return total / static_cast<double>(classes);
}

double eer(std::span<const double> scores, std::span<const std::size_t> labels) {
  if (scores.size() != labels.size()) throw ShapeError("eer: scores and labels differ in length");
  std::size_t n_pos = 0, n_neg = 0;
  for (auto l : labels) {
    if (l > 1) throw ValueError("eer: labels must be binary");
    (l ? n_pos : n_neg) += 1;
  }
  if (n_pos == 0 || n_neg == 0) throw ValueError("eer: both classes must be present");

  // Sort once; walking thresholds upward moves scores from "accepted" to "rejected".
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });

  std::size_t below_pos = 0, below_neg = 0;  // counts with score < threshold
  double best_gap = INFINITY, best = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double thr = scores[order[i]];
    const double far = static_cast<double>(n_neg - below_neg) / static_cast<double>(n_neg);
    const double frr = static_cast<double>(below_pos) / static_cast<double>(n_pos);
    const double gap = std::abs(far - frr);
    if (gap < best_gap) {
      best_gap = gap;
      best = 0.5 * (far + frr);
    }
    while (i < order.size() && scores[order[i]] == thr) {
      (labels[order[i]] ? below_pos : below_neg) += 1;
      ++i;
    }
  }
  return best;
}

}  // namespace unitprompt
