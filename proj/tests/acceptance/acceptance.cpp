// Acceptance run: one PASS/FAIL line per criterion, details indented below.
//
//   agd_acceptance [--config PATH] [--smoke-config PATH] [--tool PATH] [--out DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "agd/attacks.hpp"
#include "agd/common.hpp"
#include "agd/config.hpp"
#include "agd/detector.hpp"
#include "agd/experiments.hpp"
#include "agd/graph.hpp"
#include "agd/metrics.hpp"
#include "../support/oracles.hpp"

namespace fs = std::filesystem;
using namespace agd;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

struct Criterion {
  int id;
  std::string title;
  std::vector<std::pair<bool, std::string>> checks;

  void check(bool ok, std::string what) { checks.emplace_back(ok, std::move(what)); }
  bool passed() const {
    return !checks.empty() && std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.first; });
  }
};

int failures = 0;

void report(const Criterion& c) {
  std::cout << "criterion " << c.id << ": " << (c.passed() ? "PASS" : "FAIL") << "  " << c.title << "\n";
  for (const auto& [ok, what] : c.checks) std::cout << "    [" << (ok ? "ok" : "no") << "] " << what << "\n";
  std::cout.flush();
  if (!c.passed()) ++failures;
}

// --- 1 ---------------------------------------------------------------------

Criterion gradient_fidelity() {
  const auto start = Clock::now();
  Criterion c{1, "gradients match central differences", {}};
  std::mt19937_64 rng(101);
  const double h = 1e-5;
  std::size_t nets = 0, rejected = 0, coords = 0;
  double worst = 0.0;
  while (nets < 120) {
    auto net = oracle::random_net(rng);
    // A relu input within the probe step of its kink makes the difference
    // quotient straddle a non-differentiable point; draw another net.
    if (oracle::relu_margin(net) <= 1e-3) {
      ++rejected;
      continue;
    }
    ++nets;
    const Gradients g = backward(net.graph, forward(net.graph, net.input, net.params, net.target),
                                 net.params, {}, true);
    auto probe = [&](Tensor& t, const Tensor& analytic) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double fd = oracle::central_difference(t, i, h, [&] { return oracle::loss(net, net.input, net.params); });
        worst = std::max(worst, oracle::relative_error(analytic[i], fd));
        ++coords;
      }
    };
    probe(net.input, g.input);
    for (std::size_t p = 0; p < net.params.size(); ++p) probe(net.params[p], g.params[p]);
  }
  const double t = seconds_since(start);
  c.check(nets >= 100, std::to_string(nets) + " networks (" + std::to_string(rejected) +
                           " redrawn for relu margin), " + std::to_string(coords) + " coordinates");
  c.check(worst <= 1e-4, "worst relative error " + num(worst) + " <= 1e-4");
  c.check(t < 60.0, "runtime " + num(t) + " s < 60 s");
  return c;
}

// --- 2 ---------------------------------------------------------------------

Criterion oracle_equivalence() {
  const auto start = Clock::now();
  Criterion c{2, "AUC and tree growth match brute-force oracles", {}};
  std::mt19937_64 rng(202);

  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<int> size(1, 200), grid(0, trial % 2 ? 5 : 1000);
    std::vector<double> pos(size(rng)), neg(size(rng));
    for (double& v : pos) v = grid(rng) * 0.01 + 0.5;
    for (double& v : neg) v = grid(rng) * 0.01;
    worst = std::max(worst, std::abs(roc_auc(pos, neg).auc - oracle::pairwise_auc(pos, neg)));
  }
  c.check(worst <= 1e-12, "50 score sets, max |auc - pairwise| = " + num(worst));

  int matched = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 12 + static_cast<std::size_t>(trial), d = 2 + static_cast<std::size_t>(trial % 3);
    std::uniform_int_distribution<int> level(0, 4);
    FeatureMatrix x;
    std::vector<int> y;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> row(d);
      for (double& v : row) v = level(rng);
      y.push_back(row[0] + std::normal_distribution<double>(0, 1)(rng) > 2 ? 1 : 0);
      x.rows.push_back(std::move(row));
    }
    if (std::count(y.begin(), y.end(), 1) == 0) y[0] = 1;
    if (std::count(y.begin(), y.end(), 0) == 0) y[0] = 0;
    // Single tree, no bootstrap, every feature considered.
    ForestConfig cfg;
    cfg.tree_count = 1;
    cfg.max_depth = 2;
    cfg.min_samples_leaf = 1;
    cfg.feature_subsample = d;
    cfg.bootstrap = false;
    const Forest forest = fit(x, y, cfg);
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    const auto brute = oracle::brute_tree(x.rows, y, rows, 0, 2, 1);
    bool ok = oracle::same_tree(forest.trees().front(), 0, brute);
    for (const auto& r : x.rows) ok = ok && std::abs(forest.score(r) - brute.score(r)) < 1e-12;
    matched += ok;
  }
  c.check(matched == 20, std::to_string(matched) + "/20 depth-2 forests equal the exhaustive Gini tree");
  const double t = seconds_since(start);
  c.check(t < 60.0, "runtime " + num(t) + " s < 60 s");
  return c;
}

// --- 3-7 -------------------------------------------------------------------

bool in_box(const Tensor& adv, const Tensor& x, double eps) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(adv[i] >= 0.0 && adv[i] <= 1.0 && std::abs(adv[i] - x[i]) <= eps + 1e-9)) return false;
  }
  return true;
}

void save(const ExperimentReport& r, const fs::path& dir) {
  write_json_file(dir / (r.name + ".json"), r.to_json());
}

struct FullRun {
  RunConfig config;
  DataSplits splits;
  TrainedModel model;
  double train_seconds;
};

Criterion attack_validity(const FullRun& run, double& pgd_seconds) {
  Criterion c{3, "PGD success and l-inf validity on the trained convnet", {}};
  const auto start = Clock::now();
  const AttackConfig* pgd_cfg = nullptr;
  for (const auto& a : run.config.experiment.attacks) {
    if (a.kind == AttackKind::Pgd) pgd_cfg = &a;
  }
  if (!pgd_cfg) {
    c.check(false, "config has no pgd attack");
    return c;
  }
  const AttackFn attack = make_attack(run.model, *pgd_cfg);
  std::size_t outputs = 0, valid = 0;
  const AttackFn checked = [&](const Tensor& x, std::size_t y, std::size_t i) {
    AttackResult r = attack(x, y, i);
    ++outputs;
    valid += in_box(r.adversarial, x, pgd_cfg->epsilon);
    return r;
  };
  const PairedSet p = filter_eligible(run.model, run.splits.eval, checked);
  pgd_seconds = seconds_since(start);
  c.check(std::abs(pgd_cfg->epsilon - 0.1) < 1e-12, "epsilon " + num(pgd_cfg->epsilon));
  c.check(p.success_rate() >= 0.8, "success " + std::to_string(p.size()) + "/" + std::to_string(p.attacked) +
                                       " correctly classified eval examples = " + num(p.success_rate()) + " >= 0.8");
  c.check(outputs > 0 && valid == outputs,
          std::to_string(valid) + "/" + std::to_string(outputs) + " outputs inside the epsilon ball and [0, 1]");
  const double t = run.train_seconds + pgd_seconds;
  c.check(t < 300.0, "runtime (train " + num(run.train_seconds) + " s + attack " + num(pgd_seconds) + " s) < 300 s");
  return c;
}

Criterion separation(const ExperimentReport& r) {
  Criterion c{4, "alpha and beta/gamma separate benign from adversarial", {}};
  const ReportTable& t = r.table("separation");
  for (const char* attack : {"fgsm", "pgd"}) {
    const std::string a = attack;
    const double pairs = t.at(a, "pairs");
    c.check(pairs >= 200, a + ": " + num(pairs) + " pairs >= 200");
    const double ab = t.at(a, "median_alpha_benign"), aa = t.at(a, "median_alpha_adversarial");
    const double pa = t.at(a, "p_alpha");
    c.check(ab > aa && pa < 0.01, a + ": median alpha benign " + num(ab) + " > adversarial " + num(aa) +
                                      ", Mann-Whitney p " + num(pa) + " < 0.01");
    const double bb = t.at(a, "mean_beta_gamma_benign"), ba = t.at(a, "mean_beta_gamma_adversarial");
    const double pb = t.at(a, "p_beta_gamma");
    c.check(bb > ba && pb < 0.01, a + ": top-K beta/gamma benign " + num(bb) + " > adversarial " + num(ba) +
                                      ", Mann-Whitney p " + num(pb) + " < 0.01");
  }
  return c;
}

Criterion detection_floors(const ExperimentReport& r, double end_to_end) {
  Criterion c{5, "detection AUC floors and baseline comparison", {}};
  const ReportTable& auc = r.table("auc");
  for (const char* attack : {"fgsm", "pgd"}) {
    const double v = auc.at("agd", attack);
    c.check(v >= 0.85, std::string(attack) + " same-attack AUC " + num(v) + " >= 0.85");
  }
  const double transfer = auc.at("agd", "fgsm->pgd");
  c.check(transfer >= 0.75, "fgsm->pgd transfer AUC " + num(transfer) + " >= 0.75");
  for (const auto& col : auc.columns) {
    if (col.find("->") != std::string::npos) continue;
    const double a = auc.at("agd", col), r1 = auc.at("rand1", col), md = auc.at("median", col);
    c.check(a >= r1 && a >= md, col + ": agd " + num(a) + " >= rand1 " + num(r1) + ", >= median " + num(md));
  }
  c.check(end_to_end < 900.0, "end-to-end runtime " + num(end_to_end) + " s < 900 s");
  return c;
}

Criterion trends(const ExperimentReport& k, const ExperimentReport& transforms, const ExperimentReport& ablation) {
  Criterion c{6, "K, transform-count and score-subset trends", {}};
  const double k1 = k.table("auc").at("agd", "K=1"), k4 = k.table("auc").at("agd", "K=4");
  c.check(k4 >= k1 - 0.02, "AUC(K=4) " + num(k4) + " >= AUC(K=1) " + num(k1) + " - 0.02");
  const double t1 = transforms.table("auc").at("agd", "T=1"), t2 = transforms.table("auc").at("agd", "T=2");
  c.check(t2 - t1 <= 0.02, "AUC(T=2) " + num(t2) + " - AUC(T=1) " + num(t1) + " <= 0.02");
  const ReportTable& ab = ablation.table("auc");
  const std::string col = "K=4";
  double best_pair = 0.0;
  std::string best_name;
  for (const char* pair : {"alpha+beta", "alpha+gamma", "beta+gamma"}) {
    if (ab.at(pair, col) > best_pair) {
      best_pair = ab.at(pair, col);
      best_name = pair;
    }
  }
  const double full = ab.at("alpha+beta+gamma", col);
  c.check(full >= best_pair - 0.02, "full AUC " + num(full) + " >= best pair (" + best_name + ") " +
                                        num(best_pair) + " - 0.02");
  return c;
}

Criterion whitebox(const ExperimentReport& r, double seconds) {
  Criterion c{7, "white-box adaptive attack", {}};
  c.check(std::abs(r.metric("lambda") - 2.0) < 1e-12, "lambda " + num(r.metric("lambda")));
  const double agd = r.table("detection_auc").at("agd", "auc");
  const double rand1 = r.table("detection_auc").at("rand1", "auc");
  c.check(agd > 0.55, "agd adaptive AUC " + num(agd) + " > 0.55 (" + num(r.metric("pairs.agd")) + " pairs)");
  c.check(std::abs(rand1 - 0.5) <= 0.05,
          "rand1 adaptive AUC " + num(rand1) + " within 0.50 +/- 0.05 (" + num(r.metric("pairs.rand1")) + " pairs)");
  const ReportTable& s = r.table("attack_success");
  const double plain = s.at("pgd", "success_rate");
  for (const char* a : {"adaptive-agd", "adaptive-rand1"}) {
    const double v = s.at(a, "success_rate");
    c.check(v <= plain, std::string(a) + " success " + num(v) + " <= plain pgd " + num(plain));
  }
  c.check(seconds < 600.0, "runtime " + num(seconds) + " s < 600 s");
  return c;
}

// --- 8 ---------------------------------------------------------------------

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Criterion determinism(const FullRun& run, const std::string& first_detection, const fs::path& tool,
                      const fs::path& smoke_config, const fs::path& out) {
  Criterion c{8, "fixed seeds give byte-identical reports", {}};

  // Full-size: retrain from scratch and repeat the detection experiment.
  const TrainedModel again = train(run.config.model, run.splits.model_train, run.config.train);
  c.check(again.fingerprint() == run.model.fingerprint(), "retrained model parameters are bit-identical");
  Experiment e(again, run.splits, run.config.experiment);
  c.check(e.run_detection().to_json().dump(2) == first_detection,
          "full-size detection report identical across two independent runs");

  // Every stage and experiment through the command line, twice.
  std::vector<fs::path> dirs{out / "pipeline-a", out / "pipeline-b"};
  for (const auto& d : dirs) {
    fs::remove_all(d);
    const std::string cmd = "\"" + tool.string() + "\" pipeline -q -c \"" + smoke_config.string() +
                            "\" -o \"" + d.string() + "\"";
    const int status = std::system(cmd.c_str());
    c.check(status == 0, "pipeline run into " + d.filename().string() + " exited " + std::to_string(status));
    if (status != 0) return c;
  }
  std::size_t compared = 0, identical = 0;
  for (const auto& entry : fs::directory_iterator(dirs[0] / "reports")) {
    if (entry.path().extension() != ".json") continue;
    ++compared;
    identical += read_file(entry.path()) == read_file(dirs[1] / "reports" / entry.path().filename());
  }
  c.check(compared >= 9 && identical == compared,
          std::to_string(identical) + "/" + std::to_string(compared) + " pipeline report JSON files byte-identical");
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  fs::path config_path = AGD_SOURCE_DIR "/configs/synthetic.json";
  fs::path smoke_path = AGD_SOURCE_DIR "/configs/smoke.json";
  fs::path tool = AGD_TOOL_PATH;
  fs::path out = "acceptance-out";
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--config") config_path = argv[i + 1];
    else if (flag == "--smoke-config") smoke_path = argv[i + 1];
    else if (flag == "--tool") tool = argv[i + 1];
    else if (flag == "--out") out = argv[i + 1];
    else {
      std::cerr << "unknown flag " << flag << "\n";
      return 2;
    }
  }

  try {
    fs::create_directories(out / "reports");
    report(gradient_fidelity());
    report(oracle_equivalence());

    const auto start = Clock::now();
    RunConfig config = load_run_config(config_path);
    DataSplits splits = prepare_splits(config);
    TrainedModel model = train(config.model, splits.model_train, config.train);
    const FullRun run{std::move(config), std::move(splits), std::move(model), seconds_since(start)};
    std::cout << "  trained " << to_string(run.config.model.architecture) << ": eval accuracy "
              << num(accuracy(run.model, run.splits.eval)) << " (" << num(run.train_seconds) << " s)\n";

    double pgd_seconds = 0.0;
    report(attack_validity(run, pgd_seconds));

    Experiment e(run.model, run.splits, run.config.experiment);
    const ExperimentReport detection = e.run_detection();
    // The standalone PGD check above duplicates work the pipeline does not.
    const double end_to_end = seconds_since(start) - pgd_seconds;
    save(detection, out / "reports");
    const ExperimentReport sep = e.score_separation();
    save(sep, out / "reports");
    report(separation(sep));
    report(detection_floors(detection, end_to_end));

    const ExperimentReport k = e.sweep_k();
    const ExperimentReport transforms = e.sweep_transform_count();
    const ExperimentReport ablation = e.ablation_scores();
    for (const auto* r : {&k, &transforms, &ablation}) save(*r, out / "reports");
    report(trends(k, transforms, ablation));

    const auto wb_start = Clock::now();
    const ExperimentReport wb = e.whitebox_eval();
    const double wb_seconds = seconds_since(wb_start);
    save(wb, out / "reports");
    report(whitebox(wb, wb_seconds));

    report(determinism(run, detection.to_json().dump(2), tool, smoke_path, out));
  } catch (const Error& err) {
    std::cout << "error kind=" << to_string(err.kind()) << " message=\"" << err.what() << "\"\n";
    return 1;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << "\n";
  return failures == 0 ? 0 : 1;
}
