// agd: command-line driver for the detection pipeline.
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "agd/baselines.hpp"
#include "agd/common.hpp"
#include "agd/config.hpp"
#include "agd/experiments.hpp"

namespace fs = std::filesystem;
using namespace agd;

namespace {

constexpr const char* kOutputRootEnv = "AGD_OUTPUT_ROOT";

struct Options {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  bool force = false;
  bool quiet = false;
  std::string sweep = "all";
};

std::string short_num(double v) {
  std::ostringstream out;
  out.imbue(std::locale::classic());
  out << std::setprecision(4) << v;
  return out.str();
}

void log(const Options& o, const std::string& msg) {
  if (!o.quiet) std::cerr << "[agd] " << msg << '\n';
}

// Stage outputs carry a stamp of the config they came from. A stamp that
// matches lets a re-run reuse the stage; a different one needs --force.
class Workspace {
 public:
  Workspace(RunConfig config, const Options& opts) : config_(std::move(config)), opts_(opts) {
    Json keyed = run_config_to_json(config_);
    keyed.erase("output_dir");
    keyed.erase("jobs");
    keyed.erase("experiments");
    digest_ = std::to_string(mix_seed(stream_id(keyed.dump())));
  }

  const RunConfig& config() const { return config_; }
  fs::path root() const { return config_.output_dir; }
  fs::path path(const std::string& rel) const { return root() / rel; }

  // True if the stage must run. Throws when stale output would be overwritten.
  bool begin(const std::string& stage) {
    const fs::path stamp = path("stamps/" + stage + ".json");
    if (!fs::exists(stamp)) return true;
    if (opts_.force) return true;
    const Json j = read_json_file(stamp);
    require(j.value("config_digest", "") == digest_, ErrorKind::Config,
            "output of stage '" + stage + "' in " + root().string() +
                " was produced by a different config; pass --force to overwrite");
    log(opts_, stage + ": up to date, reusing " + root().string());
    return false;
  }

  void finish(const std::string& stage, double seconds) {
    write_json_file(path("stamps/" + stage + ".json"),
                    Json{{"stage", stage}, {"config_digest", digest_}});
    Json timings = fs::exists(path("timings.json")) ? read_json_file(path("timings.json")) : Json::object();
    timings[stage] = seconds;
    write_json_file(path("timings.json"), timings);
    log(opts_, stage + ": done in " + short_num(seconds) + " s");
  }

  const DataSplits& splits() {
    if (!splits_) {
      splits_ = prepare_splits(config_);
      RunConfig& c = config_;
      c.model.input_shape = splits_->model_train.image_shape();
      c.model.class_count = splits_->model_train.class_count;
    }
    return *splits_;
  }

  const TrainedModel& model() {
    if (!model_) {
      splits();
      const fs::path p = path("model.json");
      require(fs::exists(p), ErrorKind::Data, "model file not found: " + p.string() + " (run train-model)");
      model_ = load_model(p);
    }
    return *model_;
  }
  void set_model(TrainedModel m) { model_ = std::move(m); }

  Experiment& experiment() {
    if (!experiment_) {
      experiment_.emplace(model(), splits(), config_.experiment);
      for (const auto& a : config_.experiment.attacks) {
        for (SplitTag split : {SplitTag::DetectorTrain, SplitTag::Eval}) {
          const fs::path dir = attack_dir(split, to_string(a.kind));
          if (fs::exists(dir / "meta.json")) experiment_->preload_pairs(split, to_string(a.kind), load_paired_set(dir));
        }
      }
    }
    return *experiment_;
  }

  fs::path attack_dir(SplitTag split, const std::string& attack) const {
    return path("attacks/" + to_string(split) + "/" + attack);
  }

 private:
  RunConfig config_;
  const Options& opts_;
  std::string digest_;
  std::optional<DataSplits> splits_;
  std::optional<TrainedModel> model_;
  std::optional<Experiment> experiment_;
};

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

void write_report(Workspace& ws, const ExperimentReport& r) {
  write_json_file(ws.path("reports/" + r.name + ".json"), r.to_json());
  for (const auto& t : r.tables) {
    write_text_file(ws.path("reports/" + r.name + "." + t.name + ".csv"), t.to_csv());
  }
}

void cmd_train_model(Workspace& ws, const Options& o) {
  if (!ws.begin("train-model")) return;
  const auto start = Clock::now();
  const DataSplits& s = ws.splits();
  write_text_file(ws.path("splits.csv"), splits_csv(s));
  log(o, "training " + to_string(ws.config().model.architecture) + " on " +
             std::to_string(s.model_train.size()) + " examples");
  TrainedModel m = train(ws.config().model, s.model_train, ws.config().train);
  log(o, "train accuracy " + short_num(m.meta().train_accuracy) + ", held-out accuracy " +
             short_num(m.meta().test_accuracy) + ", eval accuracy " +
             short_num(accuracy(m, s.eval)));
  save_model(m, ws.path("model.json"));
  ws.set_model(std::move(m));
  ws.finish("train-model", elapsed(start));
}

void cmd_gen_attacks(Workspace& ws, const Options& o) {
  if (!ws.begin("gen-attacks")) return;
  const auto start = Clock::now();
  Experiment& e = ws.experiment();
  for (const auto& a : ws.config().experiment.attacks) {
    const std::string name = to_string(a.kind);
    for (SplitTag split : {SplitTag::DetectorTrain, SplitTag::Eval}) {
      const auto t = Clock::now();
      const PairedSet& p = e.pairs(split, name);
      save_paired_set(p, a, split, ws.attack_dir(split, name));
      log(o, name + " on " + to_string(split) + ": " + std::to_string(p.size()) + "/" +
                 std::to_string(p.attacked) + " eligible (" + short_num(elapsed(t)) + " s)");
    }
  }
  ws.finish("gen-attacks", elapsed(start));
}

void cmd_extract(Workspace& ws, const Options& o) {
  if (!ws.begin("extract")) return;
  const auto start = Clock::now();
  Experiment& e = ws.experiment();
  const AgdConfig agd = e.extraction_config();
  for (const auto& a : ws.config().experiment.attacks) {
    const std::string name = to_string(a.kind);
    for (SplitTag split : {SplitTag::DetectorTrain, SplitTag::Eval}) {
      const PairedSet& p = e.pairs(split, name);
      const FeatureSet& f = e.features(split, name, agd);
      write_text_file(ws.path("features/" + to_string(split) + "." + name + ".csv"),
                      features_csv(f.benign, f.adversarial, p.ids, p.ids));
      log(o, "features " + name + " on " + to_string(split) + ": " + std::to_string(2 * p.size()) + " rows");
    }
  }
  ws.finish("extract", elapsed(start));
}

void cmd_train_detector(Workspace& ws, const Options& o) {
  if (!ws.begin("train-detector")) return;
  const auto start = Clock::now();
  Experiment& e = ws.experiment();
  const AgdConfig agd = e.extraction_config();
  const auto select = select_k(ws.config().experiment.agd.k, agd.layers.size());
  for (const auto& a : ws.config().experiment.attacks) {
    const std::string name = to_string(a.kind);
    const Forest forest = e.train_detector(name, agd, select);
    save_forest(forest, ws.path("detectors/" + name + ".json"));

    const FeatureSet& train = e.features(SplitTag::DetectorTrain, name, agd);
    std::vector<double> b, adv;
    for (const auto& v : train.benign) b.push_back(forest.score(select(v)));
    for (const auto& v : train.adversarial) adv.push_back(forest.score(select(v)));
    const ThresholdResult t = choose_threshold(b, adv, ThresholdCriterion::Youden, 0.0);
    if (t.degenerate) log(o, "warning: " + t.warning);
    write_json_file(ws.path("detectors/" + name + ".threshold.json"),
                    Json{{"threshold", t.threshold}, {"tpr", t.tpr}, {"fpr", t.fpr}, {"criterion", "youden"}});
    log(o, "detector " + name + ": threshold " + short_num(t.threshold));
  }
  ws.finish("train-detector", elapsed(start));
}

void cmd_evaluate(Workspace& ws, const Options&) {
  if (!ws.begin("evaluate")) return;
  const auto start = Clock::now();
  Experiment& e = ws.experiment();
  write_report(ws, e.run_detection());
  write_report(ws, e.score_separation());
  ws.finish("evaluate", elapsed(start));
}

const std::vector<std::string>& sweep_names() {
  static const std::vector<std::string> names{"k", "transforms", "layers", "grid", "ablation", "consistency"};
  return names;
}

void run_sweep(Workspace& ws, const std::string& which) {
  Experiment& e = ws.experiment();
  if (which == "k") write_report(ws, e.sweep_k());
  else if (which == "transforms") write_report(ws, e.sweep_transform_count());
  else if (which == "layers") write_report(ws, e.sweep_layers());
  else if (which == "grid") write_report(ws, e.sweep_grid());
  else if (which == "ablation") write_report(ws, e.ablation_scores());
  else if (which == "consistency") write_report(ws, e.consistency_viz(e.settings().viz_transforms));
  else fail(ErrorKind::Config, "unknown sweep '" + which + "'");
}

void cmd_sweep(Workspace& ws, const Options& o, const std::vector<std::string>& which) {
  for (const auto& w : which) {
    if (!ws.begin("sweep-" + w)) continue;
    const auto start = Clock::now();
    log(o, "sweep " + w);
    run_sweep(ws, w);
    ws.finish("sweep-" + w, elapsed(start));
  }
}

void cmd_whitebox(Workspace& ws, const Options&) {
  if (!ws.begin("whitebox")) return;
  const auto start = Clock::now();
  write_report(ws, ws.experiment().whitebox_eval());
  ws.finish("whitebox", elapsed(start));
}

bool selected(const RunConfig& c, const std::string& name) {
  return std::find(c.experiments.begin(), c.experiments.end(), name) != c.experiments.end();
}

void cmd_pipeline(Workspace& ws, const Options& o) {
  cmd_train_model(ws, o);
  cmd_gen_attacks(ws, o);
  cmd_extract(ws, o);
  cmd_train_detector(ws, o);
  if (selected(ws.config(), "detection") || selected(ws.config(), "separation")) cmd_evaluate(ws, o);
  std::vector<std::string> sweeps;
  for (const auto& s : sweep_names()) {
    if (selected(ws.config(), s)) sweeps.push_back(s);
  }
  cmd_sweep(ws, o, sweeps);
  if (selected(ws.config(), "whitebox")) cmd_whitebox(ws, o);
}

RunConfig resolve_config(const Options& o) {
  require(fs::exists(o.config_path), ErrorKind::Config, "config file not found: " + o.config_path);
  RunConfig c = load_run_config(o.config_path);
  if (o.seed) apply_master_seed(c, *o.seed);
  if (o.jobs) {
    require(*o.jobs >= 1, ErrorKind::Config, "--jobs must be >= 1");
    c.experiment.jobs = *o.jobs;
  }
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) c.output_dir = fs::path(env) / c.output_dir.filename();
  if (!o.out.empty()) c.output_dir = o.out;
  return c;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return 2;
    case ErrorKind::Data: return 3;
    case ErrorKind::Numeric: return 4;
  }
  return 1;
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial example detection from gradient directions"};
  app.require_subcommand(1);
  app.allow_extras(false);
  Options o;

  auto add_common = [&o](CLI::App* sub) {
    sub->add_option("-c,--config", o.config_path, "Run config (JSON)")->required();
    sub->add_option("-o,--out", o.out, std::string("Output directory (overrides config and ") + kOutputRootEnv + ")");
    sub->add_option("--seed", o.seed, "Master seed; re-derives every component seed");
    sub->add_option("-j,--jobs", o.jobs, "Worker threads (default 1)");
    sub->add_flag("-f,--force", o.force, "Recompute stages whose outputs came from another config");
    sub->add_flag("-q,--quiet", o.quiet, "No progress output on stderr");
  };

  std::vector<std::pair<CLI::App*, std::function<void(Workspace&)>>> commands;
  auto add = [&](const std::string& name, const std::string& help, std::function<void(Workspace&)> fn) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub);
    commands.emplace_back(sub, std::move(fn));
    return sub;
  };
  add("train-model", "Generate/load data, split it and train the classifier",
      [&](Workspace& ws) { cmd_train_model(ws, o); });
  add("gen-attacks", "Attack detector-train and eval splits, keep eligible pairs",
      [&](Workspace& ws) { cmd_gen_attacks(ws, o); });
  add("extract", "Write AGD feature CSVs for every attack and split",
      [&](Workspace& ws) { cmd_extract(ws, o); });
  add("train-detector", "Fit one random forest per attack and pick thresholds",
      [&](Workspace& ws) { cmd_train_detector(ws, o); });
  add("evaluate", "Detection AUC table and score-separation report",
      [&](Workspace& ws) { cmd_evaluate(ws, o); });
  CLI::App* sweep = add("sweep", "Ablations: k, transforms, layers, grid, ablation, consistency or all",
                        [&](Workspace& ws) {
                          cmd_sweep(ws, o, o.sweep == "all" ? sweep_names() : std::vector<std::string>{o.sweep});
                        });
  std::vector<std::string> sweep_choices = sweep_names();
  sweep_choices.push_back("all");
  sweep->add_option("which", o.sweep, "Which sweep")->check(CLI::IsMember(sweep_choices));
  add("whitebox", "Adaptive white-box evaluation", [&](Workspace& ws) { cmd_whitebox(ws, o); });
  add("pipeline", "Every stage in order", [&](Workspace& ws) { cmd_pipeline(ws, o); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error kind=config message=\"" << one_line(e.what()) << "\"\n";
    std::cerr << "run with --help for usage\n";
    return 2;
  }

  try {
    Workspace ws(resolve_config(o), o);
    fs::create_directories(ws.root());
    write_json_file(ws.path("config.resolved.json"), run_config_to_json(ws.config()));
    for (auto& [sub, fn] : commands) {
      if (sub->parsed()) fn(ws);
    }
  } catch (const Error& e) {
    std::cerr << "error kind=" << to_string(e.kind()) << " message=\"" << one_line(e.what()) << "\"\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error kind=internal message=\"" << one_line(e.what()) << "\"\n";
    return 1;
  }
  return 0;
}
