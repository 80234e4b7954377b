#include "unitprompt/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "unitprompt/container.hpp"
#include "unitprompt/datagen.hpp"
#include "unitprompt/error.hpp"
#include "unitprompt/shapley.hpp"
#include "unitprompt/spoken_lm.hpp"
#include "unitprompt/tuner.hpp"

namespace unitprompt {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

// Sidecar provenance record. Everything nondeterministic lives here.
class Manifest {
 public:
  Manifest(std::string command, const ojson& config) {
    j_["tool"] = "unitprompt";
    j_["version"] = kVersion;
    j_["command"] = std::move(command);
    j_["timestamp"] = utc_timestamp();
    j_["config"] = config;
    j_["config_hash"] = container::sha256_hex(config.dump());
    j_["inputs"] = ojson::object();
    j_["outputs"] = ojson::object();
  }
  void input(const std::string& name, const fs::path& p) { add("inputs", name, p); }
  void output(const std::string& name, const fs::path& p) { add("outputs", name, p); }
  void write(const fs::path& p) const { container::write_text(p, j_.dump(2) + "\n"); }

 private:
  void add(const char* section, const std::string& name, const fs::path& p) {
    j_[section][name] = {{"path", p.string()}, {"sha256", container::sha256_file(p)}};
  }
  ojson j_;
};

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw ValueError(std::string(what) + " not found: " + p.string());
}

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw ValueError("cannot create output directory " + p.string());
}

datagen::SplitRatios parse_ratios(const std::vector<double>& r) {
  if (r.size() != 3) throw ValueError("--ratios takes three values: train valid test");
  return {r[0], r[1], r[2]};
}

void check_units(const std::vector<datagen::UnitSequence>& data, const LMConfig& cfg) {
  for (const auto& s : data) {
    for (auto u : s.units) {
      if (u >= cfg.vocab) {
        throw ValueError("data contains unit " + std::to_string(u) + " but the backbone vocabulary is " +
                         std::to_string(cfg.vocab));
      }
    }
    if (s.units.size() > cfg.max_len) {
      throw ValueError("data contains a sequence of length " + std::to_string(s.units.size()) +
                       " beyond max_len " + std::to_string(cfg.max_len));
    }
  }
}

std::vector<datagen::UnitSequence> nonempty_split(const std::vector<datagen::UnitSequence>& data, datagen::Split s) {
  auto out = datagen::select_split(data, s);
  if (out.empty()) throw ValueError("the " + std::string(to_string(s)) + " split is empty");
  return out;
}

// Accepts either a run directory or the run.json inside it.
fs::path run_file(const fs::path& p) { return fs::is_directory(p) ? p / "run.json" : p; }

fs::path backbone_for_run(const fs::path& run, const std::string& flag) {
  if (!flag.empty()) return flag;
  const fs::path manifest = run_file(run).parent_path() / "manifest.json";
  if (fs::is_regular_file(manifest)) {
    const json m = container::read_json(manifest);
    if (m.contains("inputs") && m["inputs"].contains("backbone")) {
      return m["inputs"]["backbone"].at("path").get<std::string>();
    }
  }
  throw ValueError("no --backbone given and none recorded next to " + run.string());
}

// ---- gen-data -------------------------------------------------------------------

struct GenDataArgs {
  std::string task;
  std::uint64_t seed = 0;
  std::size_t n_per_class = 100;
  std::vector<double> ratios{0.8, 0.1, 0.1};
  std::string out;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  const auto spec = datagen::make_task(a.task, a.seed);
  const auto ratios = parse_ratios(a.ratios);
  if (a.n_per_class == 0) throw ValueError("--n-per-class must be positive");
  make_dir(a.out);
  auto built = datagen::build_dataset(spec, a.n_per_class, ratios);

  const fs::path data = fs::path(a.out) / (a.task + ".ndjson");
  const fs::path codebook = fs::path(a.out) / (a.task + ".codebook.json");
  container::write_text(data, datagen::dataset_ndjson(built.sequences));
  datagen::save_codebook(built.codebook, codebook);

  ojson cfg{{"task", a.task}, {"seed", a.seed}, {"n_per_class", a.n_per_class}, {"ratios", a.ratios}};
  Manifest m("gen-data", cfg);
  m.output("data", data);
  m.output("codebook", codebook);
  m.write(fs::path(a.out) / (a.task + ".manifest.json"));

  std::size_t counts[3] = {0, 0, 0};
  for (const auto& s : built.sequences) ++counts[static_cast<int>(s.split)];
  out << "task " << a.task << ": " << spec.num_classes << " classes, " << built.sequences.size()
      << " examples (train " << counts[0] << ", valid " << counts[1] << ", test " << counts[2] << ")\n"
      << "wrote " << data.string() << "\n";
  return kExitOk;
}

// ---- pretrain -------------------------------------------------------------------

struct PretrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::string> variant;
  std::optional<std::size_t> epochs, batch, d_model, layers, heads, ff, max_len, vocab;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
};

int cmd_pretrain(const PretrainArgs& a, std::ostream& out) {
  json cfg = json::object();
  if (!a.config.empty()) {
    require_file(a.config, "config file");
    try {
      cfg = container::read_json(a.config);
    } catch (const FormatError& e) {
      throw ValueError(e.what());
    }
    if (!cfg.is_object()) throw ValueError("config must be a JSON object");
  }
  if (a.variant) cfg["variant"] = *a.variant;
  if (a.epochs) cfg["epochs"] = *a.epochs;
  if (a.batch) cfg["batch"] = *a.batch;
  if (a.lr) cfg["lr"] = *a.lr;
  if (a.seed) cfg["seed"] = *a.seed;
  if (a.d_model) cfg["d_model"] = *a.d_model;
  if (a.layers) cfg["layers"] = *a.layers;
  if (a.heads) cfg["heads"] = *a.heads;
  if (a.ff) cfg["ff"] = *a.ff;
  if (a.max_len) cfg["max_len"] = *a.max_len;
  if (a.vocab) cfg["vocab"] = *a.vocab;

  const LMConfig lm_cfg = LMConfig::from_json(cfg);
  PretrainConfig pc;
  try {
    pc.epochs = cfg.value("epochs", pc.epochs);
    pc.batch = cfg.value("batch", pc.batch);
    pc.lr = cfg.value("lr", pc.lr);
    pc.seed = cfg.value("seed", pc.seed);
  } catch (const json::exception& e) {
    throw ValueError(std::string("config: ") + e.what());
  }
  if (pc.epochs == 0 || pc.batch == 0 || !(pc.lr > 0.0)) throw ValueError("epochs, batch and lr must be positive");

  require_file(a.data, "data file");
  const auto data = datagen::read_dataset(a.data);
  check_units(data, lm_cfg);
  const auto train = nonempty_split(data, datagen::Split::train);
  const auto valid = datagen::select_split(data, datagen::Split::valid);

  make_dir(a.out);
  SpokenLM lm = build_lm(lm_cfg, pc.seed);
  const PretrainLog log = pretrain(lm, train, valid, pc);

  const fs::path backbone = fs::path(a.out) / "backbone.json";
  const fs::path log_path = fs::path(a.out) / "pretrain_log.ndjson";
  const fs::path metrics_path = fs::path(a.out) / "pretrain_metrics.json";
  save_lm(lm, backbone);
  std::string log_text;
  for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) {
    log_text += ojson{{"epoch", e + 1}, {"train_loss", log.epoch_loss[e]}}.dump() + "\n";
  }
  container::write_text(log_path, log_text);
  ojson metrics{{"initial_loss", log.initial_loss},
                {"valid_ppl_before", log.valid_ppl_before},
                {"valid_ppl_after", log.valid_ppl_after},
                {"parameters", lm.parameter_count()},
                {"param_digest", lm.param_digest()}};
  container::write_text(metrics_path, metrics.dump(2) + "\n");

  ojson full = lm_cfg.to_json();
  full["epochs"] = pc.epochs;
  full["batch"] = pc.batch;
  full["lr"] = pc.lr;
  full["seed"] = pc.seed;
  Manifest m("pretrain", full);
  m.input("data", a.data);
  if (!a.config.empty()) m.input("config", a.config);
  m.output("backbone", backbone);
  m.output("log", log_path);
  m.output("metrics", metrics_path);
  m.write(fs::path(a.out) / "manifest.json");

  out << "pretrained " << to_string(lm_cfg.variant) << " (" << lm.parameter_count() << " parameters), valid ppl "
      << log.valid_ppl_before << " -> " << log.valid_ppl_after << "\n"
      << "param_digest " << lm.param_digest() << "\n";
  return kExitOk;
}

// ---- tune -------------------------------------------------------------------------

struct TuneArgs {
  std::string config;
  std::string backbone;
  std::string data;
  std::string verbalizer = "learnable";
  std::size_t prompt_len = 5;
  std::uint64_t seed = 0;
  std::string out;
  std::string metric = "acc";
  std::optional<std::size_t> epochs, batch, patience;
  std::optional<double> lr;
};

int cmd_tune(const TuneArgs& a, std::ostream& out) {
  json cfg_json = json::object();
  if (!a.config.empty()) {
    require_file(a.config, "config file");
    try {
      cfg_json = container::read_json(a.config);
    } catch (const FormatError& e) {
      throw ValueError(e.what());
    }
  }
  cfg_json["verbalizer"] = a.verbalizer;
  cfg_json["prompt_len"] = a.prompt_len;
  cfg_json["seed"] = a.seed;
  if (a.epochs) cfg_json["epochs"] = *a.epochs;
  if (a.batch) cfg_json["batch"] = *a.batch;
  if (a.patience) cfg_json["patience"] = *a.patience;
  if (a.lr) cfg_json["lr"] = *a.lr;
  const TuneConfig cfg = TuneConfig::from_json(cfg_json);
  const Metric metric = metric_from_string(a.metric);

  require_file(a.backbone, "backbone checkpoint");
  require_file(a.data, "data file");
  const SpokenLM lm = load_lm(a.backbone);
  if (!lm.frozen()) throw StateError("backbone " + a.backbone + " is not frozen; refusing to tune");
  const auto data = datagen::read_dataset(a.data);
  check_units(data, lm.config);
  const std::size_t C = datagen::num_classes(data);
  if (C < 2) throw ValueError("data has fewer than two classes");
  if (C > lm.config.vocab) throw ValueError("more classes than backbone vocabulary units");
  const auto train = nonempty_split(data, datagen::Split::train);
  const auto valid = datagen::select_split(data, datagen::Split::valid);
  const auto test = nonempty_split(data, datagen::Split::test);
  if (metric == Metric::eer && C != 2) throw ValueError("eer needs a binary task, this one has " + std::to_string(C));

  const std::string backbone_hash = container::sha256_file(a.backbone);
  PromptSet prompts = init_prompts(lm.config, cfg.prompt_len, cfg.seed);
  Verbalizer v = make_verbalizer(cfg.verbalizer, lm, prompts, train, C, cfg.seed);
  const TuneLog log = tune(lm, prompts, v, train, valid, cfg);
  const EvalReport report = evaluate(lm, prompts, v, test, metric);

  const std::string task = fs::path(a.data).stem().string();
  TunedRun run{cfg, lm.config, lm.param_digest(), C, prompts, v, report.to_json(task)};
  const fs::path dir = fs::path(a.out) / (std::string(to_string(cfg.verbalizer)) + "-l" +
                                          std::to_string(cfg.prompt_len) + "-s" + std::to_string(cfg.seed));
  make_dir(dir);
  save_run(run, dir / "run.json");
  container::write_text(dir / "train_log.ndjson", log_ndjson(log));
  container::write_text(dir / "metrics.json", report.to_json(task).dump(2) + "\n");

  if (container::sha256_file(a.backbone) != backbone_hash) throw StateError("backbone file changed during tuning");
  Manifest m("tune", cfg.to_json());
  m.input("backbone", a.backbone);
  m.input("data", a.data);
  m.output("run", dir / "run.json");
  m.output("log", dir / "train_log.ndjson");
  m.output("metrics", dir / "metrics.json");
  m.write(dir / "manifest.json");

  out << "tuned " << to_string(cfg.verbalizer) << " l=" << cfg.prompt_len << " seed=" << cfg.seed << ": best valid "
      << log.best_valid << " at epoch " << log.best_epoch << ", test " << to_string(metric) << " " << report.value
      << "\nwrote " << dir.string() << "\n";
  return kExitOk;
}

// ---- eval -------------------------------------------------------------------------

struct EvalArgs {
  std::string run;
  std::string data;
  std::string metric = "acc";
  std::string split = "test";
  std::string backbone;
  std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Metric metric = metric_from_string(a.metric);
  const auto split = datagen::split_from_string(a.split);
  require_file(run_file(a.run), "run checkpoint");
  require_file(a.data, "data file");
  const TunedRun run = load_run(run_file(a.run));
  const fs::path backbone = backbone_for_run(a.run, a.backbone);
  require_file(backbone, "backbone checkpoint");
  const SpokenLM lm = load_lm(backbone);
  check_backbone(run, lm);
  if (metric == Metric::eer && run.classes != 2) {
    throw ValueError("eer needs a binary task, this run has " + std::to_string(run.classes) + " classes");
  }
  const auto data = datagen::read_dataset(a.data);
  check_units(data, lm.config);
  const auto subset = nonempty_split(data, split);
  const EvalReport report = evaluate(lm, run.prompts, run.verbalizer, subset, metric);
  const ojson j = report.to_json(fs::path(a.data).stem().string());
  const fs::path dest = a.out.empty() ? run_file(a.run).parent_path() / ("eval-" + a.split + "-" + a.metric + ".json")
                                      : fs::path(a.out);
  container::write_text(dest, j.dump(2) + "\n");
  out << j.dump() << "\n";
  return kExitOk;
}

// ---- analyze ----------------------------------------------------------------------

struct AnalyzeArgs {
  std::string run;
  std::string data;
  std::optional<std::size_t> class_id;
  std::size_t top_k = 10;
  std::string format = "ndjson";
  std::string out;
  std::string split = "test";
  std::string backbone;
};

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out) {
  const ExportFormat format = export_format_from_string(a.format);
  const auto split = datagen::split_from_string(a.split);
  if (a.top_k == 0) throw ValueError("--top-k must be positive");
  require_file(run_file(a.run), "run checkpoint");
  require_file(a.data, "data file");
  const TunedRun run = load_run(run_file(a.run));
  const auto* lv = std::get_if<LearnableVerbalizer>(&run.verbalizer);
  if (!lv) {
    throw StateError("SHAP analysis needs a learnable verbalizer; this run uses a " +
                     std::string(to_string(kind_of(run.verbalizer))) + " mapping, which has no weights to explain");
  }
  if (a.class_id && *a.class_id >= run.classes) {
    throw ValueError("--class " + std::to_string(*a.class_id) + " out of range for " + std::to_string(run.classes) +
                     " classes");
  }
  const fs::path backbone = backbone_for_run(a.run, a.backbone);
  require_file(backbone, "backbone checkpoint");
  const SpokenLM lm = load_lm(backbone);
  check_backbone(run, lm);
  const auto data = datagen::read_dataset(a.data);
  check_units(data, lm.config);

  const auto bg = summarize_background(readout_distributions(lm, run.prompts, nonempty_split(data, datagen::Split::train)));
  const auto subset = nonempty_split(data, split);
  const auto readouts = readout_distributions(lm, run.prompts, subset);

  make_dir(a.out);
  std::vector<std::size_t> classes;
  if (a.class_id) {
    classes.push_back(*a.class_id);
  } else {
    for (std::size_t c = 0; c < run.classes; ++c) classes.push_back(c);
  }
  ojson summary = ojson::array();
  const std::string ext = format == ExportFormat::ndjson ? ".ndjson" : ".svg";
  for (auto c : classes) {
    std::vector<ShapExplanation> ex;
    for (std::size_t i = 0; i < readouts.size(); ++i) ex.push_back(linear_shap(*lv, readouts[i], bg, c, i));
    const Ranking r = rank_units(ex, c, a.top_k);
    const fs::path dest = fs::path(a.out) / ("shap-class" + std::to_string(c) + ext);
    export_beeswarm(r, dest, format);
    ojson units = ojson::array();
    for (const auto& u : r.units) units.push_back({{"unit", u.unit}, {"mean_abs_phi", u.mean_abs_phi}});
    summary.push_back({{"class", c}, {"datapoints", readouts.size()}, {"top", units}});
    out << "class " << c << ": top units";
    for (const auto& u : r.units) out << " " << u.unit;
    out << " -> " << dest.string() << "\n";
  }
  container::write_text(fs::path(a.out) / "ranking.json", summary.dump(2) + "\n");
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prompt tuning of frozen spoken unit language models on synthetic tasks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic task, quantize it and write unit sequences");
  gen->add_option("--task", gd.task, "Task name")->required();
  gen->add_option("--seed", gd.seed, "Generator seed");
  gen->add_option("--n-per-class", gd.n_per_class, "Examples per class");
  gen->add_option("--ratios", gd.ratios, "Train/valid/test fractions")->expected(3);
  gen->add_option("--out", gd.out, "Output directory")->required();

  PretrainArgs pa;
  auto* pre = app.add_subcommand("pretrain", "Pretrain and freeze a backbone on the train split");
  pre->add_option("--config", pa.config, "JSON config; flags override its keys");
  pre->add_option("--data", pa.data, "Dataset NDJSON")->required();
  pre->add_option("--out", pa.out, "Output directory")->required();
  pre->add_option("--variant", pa.variant, "gslm or pgslm");
  pre->add_option("--epochs", pa.epochs);
  pre->add_option("--batch", pa.batch);
  pre->add_option("--lr", pa.lr);
  pre->add_option("--seed", pa.seed);
  pre->add_option("--d-model", pa.d_model);
  pre->add_option("--layers", pa.layers);
  pre->add_option("--heads", pa.heads);
  pre->add_option("--ff", pa.ff);
  pre->add_option("--max-len", pa.max_len);
  pre->add_option("--vocab", pa.vocab);

  TuneArgs ta;
  auto* tun = app.add_subcommand("tune", "Train prompts and verbalizer against a frozen backbone");
  tun->add_option("--config", ta.config, "JSON tune config; flags override its keys");
  tun->add_option("--backbone", ta.backbone, "Backbone checkpoint")->required();
  tun->add_option("--data", ta.data, "Dataset NDJSON")->required();
  tun->add_option("--verbalizer", ta.verbalizer, "learnable, random or frequency");
  tun->add_option("--prompt-len", ta.prompt_len, "Prompt length l")->capture_default_str();
  tun->add_option("--seed", ta.seed);
  tun->add_option("--out", ta.out, "Parent of the run directory")->required();
  tun->add_option("--metric", ta.metric, "Test metric written to metrics.json (acc, f1, eer)");
  tun->add_option("--epochs", ta.epochs);
  tun->add_option("--batch", ta.batch);
  tun->add_option("--lr", ta.lr);
  tun->add_option("--patience", ta.patience);

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate a tuned run");
  ev->add_option("--run", ea.run, "Run directory or run.json")->required();
  ev->add_option("--data", ea.data, "Dataset NDJSON")->required();
  ev->add_option("--metric", ea.metric, "acc, f1 or eer");
  ev->add_option("--split", ea.split, "train, valid or test");
  ev->add_option("--backbone", ea.backbone, "Backbone checkpoint (default: the one recorded for the run)");
  ev->add_option("--out", ea.out, "Report path (default: inside the run directory)");

  AnalyzeArgs aa;
  auto* an = app.add_subcommand("analyze", "SHAP analysis of a learnable verbalizer");
  an->add_option("--run", aa.run, "Run directory or run.json")->required();
  an->add_option("--data", aa.data, "Dataset NDJSON")->required();
  an->add_option("--class", aa.class_id, "Class to explain (default: every class)");
  an->add_option("--top-k", aa.top_k, "Units per class")->capture_default_str();
  an->add_option("--format", aa.format, "ndjson or svg");
  an->add_option("--out", aa.out, "Output directory")->required();
  an->add_option("--split", aa.split, "Split to explain");
  an->add_option("--backbone", aa.backbone, "Backbone checkpoint (default: the one recorded for the run)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(gd, out);
    if (*pre) return cmd_pretrain(pa, out);
    if (*tun) return cmd_tune(ta, out);
    if (*ev) return cmd_eval(ea, out);
    if (*an) return cmd_analyze(aa, out);
  } catch (const StateError& e) {
    err << "error: " << e.what() << "\n";
    return kExitState;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace unitprompt
