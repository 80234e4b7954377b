#include "unitprompt/shapley.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "json.hpp"
#include "unitprompt/container.hpp"
#include "unitprompt/error.hpp"

namespace unitprompt {

BackgroundSummary summarize_background(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ValueError("background: no reference rows");
  BackgroundSummary bg;
  bg.n = rows.size();
  bg.mean.assign(rows.front().size(), 0.0);
  for (const auto& r : rows) {
    if (r.size() != bg.mean.size()) throw ShapeError("background: rows differ in length");
    for (std::size_t i = 0; i < r.size(); ++i) bg.mean[i] += r[i];
  }
  for (double& m : bg.mean) m /= static_cast<double>(bg.n);
  return bg;
}

ShapExplanation linear_shap(const LearnableVerbalizer& v, std::span<const double> x, const BackgroundSummary& bg,
                            std::size_t class_id, std::size_t datapoint) {
  const std::size_t V = v.vocab();
  if (x.size() != V || bg.mean.size() != V) {
    throw ShapeError("linear_shap: input of length " + std::to_string(x.size()) + " and background of length " +
                     std::to_string(bg.mean.size()) + " for vocabulary " + std::to_string(V));
  }
  if (class_id >= v.classes()) throw ValueError("linear_shap: class " + std::to_string(class_id) + " out of range");
  const auto w = v.weights.data().subspan(class_id * V, V);
  ShapExplanation e;
  e.datapoint = datapoint;
  e.class_id = class_id;
  e.feature_values.assign(x.begin(), x.end());
  e.phi.resize(V);
  double base = v.bias.data()[class_id];
  for (std::size_t i = 0; i < V; ++i) {
    e.phi[i] = w[i] * (x[i] - bg.mean[i]);
    base += w[i] * bg.mean[i];
  }
  e.base_value = base;
  return e;
}

std::vector<double> brute_force_shapley(const FeatureFn& f, std::span<const double> x, std::span<const double> mu) {
  const std::size_t n = x.size();
  if (mu.size() != n) throw ShapeError("brute_force_shapley: input and background differ in length");
  if (n > 20) throw ValueError("brute_force_shapley: " + std::to_string(n) + " features exceeds the limit of 20");
  if (n == 0) return {};

  // Value of every coalition, indexed by bitmask.
  const std::size_t subsets = std::size_t{1} << n;
  std::vector<double> value(subsets);
  std::vector<double> z(n);
  for (std::size_t s = 0; s < subsets; ++s) {
    for (std::size_t i = 0; i < n; ++i) z[i] = (s >> i & 1) ? x[i] : mu[i];
    value[s] = f(z);
  }
  // weight[k] = k! (n-k-1)! / n!
  std::vector<double> weight(n);
  for (std::size_t k = 0; k < n; ++k) {
    weight[k] = std::exp(std::lgamma(k + 1.0) + std::lgamma(static_cast<double>(n - k)) - std::lgamma(n + 1.0));
  }
  std::vector<double> phi(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t bit = std::size_t{1} << i;
    for (std::size_t s = 0; s < subsets; ++s) {
      if (s & bit) continue;
      phi[i] += weight[static_cast<std::size_t>(std::popcount(s))] * (value[s | bit] - value[s]);
    }
  }
  return phi;
}

Ranking rank_units(const std::vector<ShapExplanation>& explanations, std::size_t class_id, std::size_t k) {
  if (explanations.empty()) throw ValueError("rank_units: no explanations");
  const std::size_t V = explanations.front().phi.size();
  std::vector<double> mean(V, 0.0);
  for (const auto& e : explanations) {
    if (e.class_id != class_id) throw ValueError("rank_units: explanation for a different class");
    if (e.phi.size() != V) throw ShapeError("rank_units: explanations differ in length");
    for (std::size_t i = 0; i < V; ++i) mean[i] += std::abs(e.phi[i]);
  }
  for (double& m : mean) m /= static_cast<double>(explanations.size());

  std::vector<std::size_t> order(V);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return mean[a] > mean[b]; });
  order.resize(std::min(k, V));

  Ranking r;
  r.class_id = class_id;
  for (auto u : order) {
    RankedUnit ru;
    ru.unit = u;
    ru.mean_abs_phi = mean[u];
    for (const auto& e : explanations) {
      ru.phi.push_back(e.phi[u]);
      ru.feature_values.push_back(e.feature_values.empty() ? 0.0 : e.feature_values[u]);
      ru.datapoints.push_back(e.datapoint);
    }
    r.units.push_back(std::move(ru));
  }
  return r;
}

ExportFormat export_format_from_string(std::string_view s) {
  if (s == "ndjson") return ExportFormat::ndjson;
  if (s == "svg") return ExportFormat::svg;
  throw ValueError("unknown export format '" + std::string(s) + "'");
}

std::string beeswarm_ndjson(const Ranking& r) {
  std::string out;
  for (std::size_t rank = 0; rank < r.units.size(); ++rank) {
    const auto& u = r.units[rank];
    for (std::size_t i = 0; i < u.phi.size(); ++i) {
      nlohmann::ordered_json j;
      j["unit"] = u.unit;
      j["rank"] = rank;
      j["phi"] = u.phi[i];
      j["feature_value"] = u.feature_values[i];
      j["datapoint"] = u.datapoints[i];
      out += j.dump() + "\n";
    }
  }
  return out;
}

namespace {

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

// Blue (low) to red (high).
std::string color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(30 + t * (230 - 30)));
  const int g = static_cast<int>(std::lround(136 - t * (136 - 30)));
  const int b = static_cast<int>(std::lround(229 - t * (229 - 80)));
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace

std::string beeswarm_svg(const Ranking& r) {
  const double band = 28.0, left = 90.0, plot_w = 520.0, top = 30.0;
  const double width = left + plot_w + 30.0;
  const double height = top + band * static_cast<double>(r.units.size()) + 40.0;

  double lim = 0.0, fmin = INFINITY, fmax = -INFINITY;
  for (const auto& u : r.units) {
    for (double p : u.phi) lim = std::max(lim, std::abs(p));
    for (double f : u.feature_values) {
      fmin = std::min(fmin, f);
      fmax = std::max(fmax, f);
    }
  }
  if (lim == 0.0) lim = 1.0;
  const double frange = fmax > fmin ? fmax - fmin : 1.0;
  auto xpos = [&](double phi) { return left + plot_w * (0.5 + 0.5 * phi / lim); };

  std::string s;
  s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(width) + "\" height=\"" + fmt(height) +
       "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<text x=\"" + fmt(left) + "\" y=\"18\">class " + std::to_string(r.class_id) + "</text>\n";
  s += "<line x1=\"" + fmt(xpos(0)) + "\" y1=\"" + fmt(top) + "\" x2=\"" + fmt(xpos(0)) + "\" y2=\"" +
       fmt(height - 40) + "\" stroke=\"#999\"/>\n";
  for (std::size_t rank = 0; rank < r.units.size(); ++rank) {
    const auto& u = r.units[rank];
    const double cy = top + band * (static_cast<double>(rank) + 0.5);
    s += "<text x=\"8\" y=\"" + fmt(cy + 4) + "\">unit " + std::to_string(u.unit) + "</text>\n";
    for (std::size_t i = 0; i < u.phi.size(); ++i) {
      // Deterministic vertical jitter so coincident points stay visible.
      const double jitter = (static_cast<double>((u.datapoints[i] * 2654435761u) % 1000) / 1000.0 - 0.5) * band * 0.6;
      s += "<circle class=\"point\" cx=\"" + fmt(xpos(u.phi[i])) + "\" cy=\"" + fmt(cy + jitter) +
           "\" r=\"3\" fill=\"" + color((u.feature_values[i] - fmin) / frange) + "\" fill-opacity=\"0.8\"/>\n";
    }
  }
  s += "<text x=\"" + fmt(left + plot_w / 2 - 40) + "\" y=\"" + fmt(height - 12) +
       "\">SHAP value (class score)</text>\n";
  s += "</svg>\n";
  return s;
}

void export_beeswarm(const Ranking& r, const std::filesystem::path& path, ExportFormat format) {
  if (r.units.empty()) throw ValueError("export_beeswarm: empty ranking");
  container::write_text(path, format == ExportFormat::ndjson ? beeswarm_ndjson(r) : beeswarm_svg(r));
}

std::vector<std::vector<std::size_t>> cross_run_overlap(const std::vector<Ranking>& runs, std::size_t k) {
  if (k < 1) throw ValueError("cross_run_overlap: k must be at least 1");
  if (runs.size() < 2) throw ValueError("cross_run_overlap: need at least two runs");
  std::vector<std::set<std::size_t>> tops;
  for (const auto& r : runs) {
    std::set<std::size_t> t;
    for (std::size_t i = 0; i < std::min(k, r.units.size()); ++i) t.insert(r.units[i].unit);
    tops.push_back(std::move(t));
  }
  std::vector<std::vector<std::size_t>> out(runs.size(), std::vector<std::size_t>(runs.size(), 0));
  for (std::size_t a = 0; a < runs.size(); ++a) {
    for (std::size_t b = 0; b < runs.size(); ++b) {
      std::size_t n = 0;
      for (auto u : tops[a]) n += tops[b].count(u);
      out[a][b] = n;
    }
  }
  return out;
}

}  // namespace unitprompt
