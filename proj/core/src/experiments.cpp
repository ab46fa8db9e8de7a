#include "agd/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "agd/baselines.hpp"
#include "agd/common.hpp"

namespace agd {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v) {
  std::ostringstream out;
  out.imbue(std::locale::classic());
  out << v;
  return out.str();
}

Json attack_to_json(const AttackConfig& a) {
  Json j = {{"kind", to_string(a.kind)},
            {"epsilon", a.epsilon},
            {"step_size", a.step_size},
            {"steps", a.steps},
            {"seed", a.seed}};
  if (a.kind == AttackKind::AdaptivePgd) j["lambda"] = a.lambda;
  if (a.kind == AttackKind::Boundary) {
    j["init_trials"] = a.init_trials;
    j["orthogonal_step"] = a.orthogonal_step;
    j["contraction_step"] = a.contraction_step;
  }
  return j;
}

Json agd_to_json(const AgdConfig& c) {
  return {{"k", c.k},
          {"step", c.step},
          {"layers", c.layers},
          {"pixel_count", c.perturbation.pixel_count},
          {"magnitude", c.perturbation.magnitude},
          {"empty_class", c.empty_class == EmptyClassPolicy::Error ? "error" : "global-nearest"}};
}

std::vector<std::size_t> all_positions(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

std::vector<double> column(std::span<const AgdFeatureVector> vs,
                           const std::function<double(const AgdFeatureVector&)>& f) {
  std::vector<double> out;
  out.reserve(vs.size());
  for (const auto& v : vs) out.push_back(f(v));
  return out;
}

// alpha of the predicted class, averaged over tap layers.
double alpha_top(const AgdFeatureVector& v) {
  double s = 0.0;
  for (std::size_t m = 0; m < v.layer_count; ++m) s += v.alpha(m, 0);
  return s / static_cast<double>(v.layer_count);
}

// beta and gamma over every top-K class and tap layer, averaged.
double beta_gamma_topk(const AgdFeatureVector& v, std::size_t k) {
  double s = 0.0;
  for (std::size_t m = 0; m < v.layer_count; ++m) {
    for (std::size_t r = 0; r < k; ++r) s += v.beta(m, r) + v.gamma(m, r);
  }
  return s / static_cast<double>(2 * k * v.layer_count);
}

ReportTable make_table(std::string name, std::vector<std::string> rows,
                       std::vector<std::string> columns, bool is_auc) {
  ReportTable t;
  t.name = std::move(name);
  t.rows = std::move(rows);
  t.columns = std::move(columns);
  t.values.assign(t.rows.size(), std::vector<double>(t.columns.size(), 0.0));
  t.is_auc = is_auc;
  return t;
}

}  // namespace

PairedSet filter_eligible(const TrainedModel& model, const LabeledSet& set, const AttackFn& attack,
                          std::size_t jobs) {
  std::vector<char> correct(set.size(), 0);
  std::vector<AttackResult> results(set.size());
  parallel_for(set.size(), jobs, [&](std::size_t i) {
    if (model.predict(set.images[i]).label != set.labels[i]) return;
    correct[i] = 1;
    results[i] = attack(set.images[i], set.labels[i], i);
  });

  PairedSet out;
  out.considered = set.size();
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (!correct[i]) continue;
    ++out.attacked;
    if (!results[i].success) continue;
    out.ids.push_back(set.ids[i]);
    out.labels.push_back(set.labels[i]);
    out.benign.push_back(set.images[i]);
    out.adversarial.push_back(results[i].adversarial);
    out.results.push_back(std::move(results[i]));
  }
  return out;
}

AttackFn make_attack(const TrainedModel& model, const AttackConfig& config,
                     std::vector<Tensor> pool) {
  validate(config);
  auto shared_pool = std::make_shared<const std::vector<Tensor>>(std::move(pool));
  return [&model, config, shared_pool](const Tensor& input, std::size_t label, std::size_t i) {
    AttackConfig local = config;
    local.seed = derive_seed(config.seed, stream_id("attack-example"), i);
    return run_attack(model, input, label, local, *shared_pool);
  };
}

double ReportTable::at(const std::string& row, const std::string& col) const {
  const auto r = std::find(rows.begin(), rows.end(), row);
  const auto c = std::find(columns.begin(), columns.end(), col);
  require(r != rows.end() && c != columns.end(), ErrorKind::Config,
          "table '" + name + "' has no cell (" + row + ", " + col + ")");
  return values[static_cast<std::size_t>(r - rows.begin())][static_cast<std::size_t>(c - columns.begin())];
}

void ReportTable::set(const std::string& row, const std::string& col, double value) {
  const auto r = std::find(rows.begin(), rows.end(), row);
  const auto c = std::find(columns.begin(), columns.end(), col);
  require(r != rows.end() && c != columns.end(), ErrorKind::Config,
          "table '" + name + "' has no cell (" + row + ", " + col + ")");
  if (is_auc) {
    require(value >= 0.0 && value <= 1.0, ErrorKind::Numeric,
            "AUC cell outside [0,1] in table '" + name + "'");
  }
  values[static_cast<std::size_t>(r - rows.begin())][static_cast<std::size_t>(c - columns.begin())] = value;
}

std::string ReportTable::to_csv() const {
  std::ostringstream out;
  out << "row";
  for (const auto& c : columns) out << ',' << c;
  out << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out << rows[r];
    for (double v : values[r]) out << ',' << format_double(v);
    out << '\n';
  }
  return out.str();
}

const ReportTable& ExperimentReport::table(const std::string& table_name) const {
  for (const auto& t : tables) {
    if (t.name == table_name) return t;
  }
  fail(ErrorKind::Config, "report '" + name + "' has no table '" + table_name + "'");
}

double ExperimentReport::metric(const std::string& key) const {
  for (const auto& [k, v] : metrics) {
    if (k == key) return v;
  }
  fail(ErrorKind::Config, "report '" + name + "' has no metric '" + key + "'");
}

Json ExperimentReport::to_json() const {
  Json j;
  j["name"] = name;
  j["config"] = config;
  Json ts = Json::array();
  for (const auto& t : tables) {
    ts.push_back({{"name", t.name},
                  {"is_auc", t.is_auc},
                  {"rows", t.rows},
                  {"columns", t.columns},
                  {"values", t.values}});
  }
  j["tables"] = std::move(ts);
  Json ms = Json::object();
  for (const auto& [k, v] : metrics) ms[k] = v;
  j["metrics"] = std::move(ms);
  return j;
}

Json settings_to_json(const ExperimentSettings& s) {
  Json attacks = Json::array();
  for (const auto& a : s.attacks) attacks.push_back(attack_to_json(a));
  return {{"agd", agd_to_json(s.agd)},
          {"forest",
           {{"tree_count", s.forest.tree_count},
            {"max_depth", s.forest.max_depth},
            {"min_samples_leaf", s.forest.min_samples_leaf},
            {"feature_subsample", s.forest.feature_subsample},
            {"bootstrap", s.forest.bootstrap},
            {"seed", s.forest.seed}}},
          {"attacks", attacks},
          {"baseline_layer", s.baseline_layer},
          {"rand1_sigmas", s.rand1_sigmas},
          {"k_values", s.k_values},
          {"transform_counts", s.transform_counts},
          {"mu_values", s.mu_values},
          {"step_values", s.step_values},
          {"adaptive", attack_to_json(s.adaptive)},
          {"whitebox_examples", s.whitebox_examples},
          {"viz_transforms", s.viz_transforms},
          {"seed", s.seed}};
}

FeatureMatrix to_matrix(std::span<const AgdFeatureVector> benign,
                        std::span<const AgdFeatureVector> adversarial,
                        const FeatureSelector& select, std::vector<int>& labels) {
  FeatureMatrix m;
  labels.clear();
  for (const auto& v : benign) {
    m.rows.push_back(select(v));
    labels.push_back(0);
  }
  for (const auto& v : adversarial) {
    m.rows.push_back(select(v));
    labels.push_back(1);
  }
  return m;
}

FeatureSelector select_k(std::size_t k, std::size_t layer_count, ScoreMask mask) {
  const auto layers = all_positions(layer_count);
  return [k, layers, mask](const AgdFeatureVector& v) { return select_scores(v, k, layers, mask); };
}

Experiment::Experiment(const TrainedModel& model, const DataSplits& splits,
                       ExperimentSettings settings)
    : model_(model),
      splits_(splits),
      settings_(std::move(settings)),
      index_(ReferenceIndex::build(model, splits.reference)) {
  validate(settings_.agd, model_);
  validate(settings_.forest);
  require(!settings_.attacks.empty(), ErrorKind::Config, "experiment needs at least one attack");
  for (const auto& a : settings_.attacks) validate(a);
  require(!settings_.k_values.empty() && !settings_.transform_counts.empty() &&
              !settings_.mu_values.empty() && !settings_.step_values.empty() &&
              !settings_.rand1_sigmas.empty(),
          ErrorKind::Config, "sweep lists must not be empty");
  for (auto k : settings_.k_values) {
    require(k >= 1 && k <= model_.class_count(), ErrorKind::Config, "sweep K out of range");
  }
}

const AttackConfig& Experiment::attack(const std::string& name) const {
  for (const auto& a : settings_.attacks) {
    if (to_string(a.kind) == name) return a;
  }
  fail(ErrorKind::Config, "attack '" + name + "' is not configured");
}

const LabeledSet& Experiment::split_set(SplitTag split) const {
  switch (split) {
    case SplitTag::DetectorTrain: return splits_.detector_train;
    case SplitTag::Eval: return splits_.eval;
    case SplitTag::Reference: return splits_.reference;
    case SplitTag::ModelTrain: return splits_.model_train;
    case SplitTag::All: break;
  }
  fail(ErrorKind::Config, "no such split");
}

std::string Experiment::pair_key(SplitTag split, const std::string& attack_name) const {
  return std::to_string(model_.fingerprint()) + "|" + to_string(split) + "|" +
         attack_to_json(attack(attack_name)).dump();
}

void Experiment::preload_pairs(SplitTag split, const std::string& attack_name, PairedSet set) {
  pair_cache_.insert_or_assign(pair_key(split, attack_name), std::move(set));
}

const PairedSet& Experiment::pairs(SplitTag split, const std::string& attack_name) {
  const AttackConfig& cfg = attack(attack_name);
  const std::string key = pair_key(split, attack_name);
  if (auto it = pair_cache_.find(key); it != pair_cache_.end()) return it->second;

  AttackConfig local = cfg;
  local.seed = derive_seed(settings_.seed ^ cfg.seed, stream_id("attack-" + to_string(split)));
  const auto attack_fn = make_attack(model_, local, splits_.reference.images);
  auto result = filter_eligible(model_, split_set(split), attack_fn, settings_.jobs);
  return pair_cache_.emplace(key, std::move(result)).first->second;
}

std::uint64_t Experiment::feature_seed(SplitTag split, std::size_t transform) const {
  return derive_seed(settings_.seed, stream_id("features-" + to_string(split)), transform);
}

std::string Experiment::feature_key(SplitTag split, const std::string& attack_name,
                                    const AgdConfig& agd, std::size_t transform) const {
  return std::to_string(model_.fingerprint()) + "|" + to_string(split) + "|" +
         attack_to_json(attack(attack_name)).dump() + "|" + agd_to_json(agd).dump() + "|" +
         std::to_string(transform);
}

const FeatureSet& Experiment::features(SplitTag split, const std::string& attack_name,
                                       const AgdConfig& agd, std::size_t transform) {
  const std::string key = feature_key(split, attack_name, agd, transform);
  if (auto it = feature_cache_.find(key); it != feature_cache_.end()) return it->second;
  const PairedSet& p = pairs(split, attack_name);
  const std::uint64_t seed = feature_seed(split, transform);
  FeatureSet fs;
  fs.benign = extract_batch(model_, p.benign, index_, agd, seed, settings_.jobs);
  fs.adversarial = extract_batch(model_, p.adversarial, index_, agd, seed, settings_.jobs);
  return feature_cache_.emplace(key, std::move(fs)).first->second;
}

AgdConfig Experiment::extraction_config() const {
  AgdConfig c = settings_.agd;
  for (auto k : settings_.k_values) c.k = std::max(c.k, k);
  c.k = std::max<std::size_t>(c.k, 4);
  c.k = std::min(c.k, model_.class_count());
  c.perturbation.seed = 0;
  return c;
}

Forest Experiment::train_detector(const std::string& attack_name, const AgdConfig& agd,
                                  const FeatureSelector& select) {
  const FeatureSet& train = features(SplitTag::DetectorTrain, attack_name, agd);
  std::vector<int> labels;
  const FeatureMatrix x = to_matrix(train.benign, train.adversarial, select, labels);
  return fit(x, labels, settings_.forest);
}

double Experiment::detector_auc(const std::string& train_attack, const std::string& test_attack,
                                const AgdConfig& agd, const FeatureSelector& select) {
  const Forest forest = train_detector(train_attack, agd, select);
  const FeatureSet& test = features(SplitTag::Eval, test_attack, agd);
  std::vector<double> benign, adversarial;
  for (const auto& v : test.benign) benign.push_back(forest.score(select(v)));
  for (const auto& v : test.adversarial) adversarial.push_back(forest.score(select(v)));
  return roc_auc(adversarial, benign).auc;
}

std::vector<double> Experiment::rand1_scores(std::span<const Tensor> images, double sigma,
                                             std::uint64_t seed) const {
  std::vector<double> out(images.size());
  parallel_for(images.size(), settings_.jobs, [&](std::size_t i) {
    out[i] = rand1_score(model_, images[i], sigma, settings_.baseline_layer,
                         derive_seed(seed, stream_id("rand1-example"), i))
                 .r;
  });
  return out;
}

std::vector<double> Experiment::median_scores(std::span<const Tensor> images) const {
  std::vector<double> out(images.size());
  parallel_for(images.size(), settings_.jobs, [&](std::size_t i) {
    out[i] = median_score(model_, images[i], settings_.baseline_layer).r;
  });
  return out;
}

double Experiment::select_rand1_sigma(const std::string& attack_name) {
  const PairedSet& p = pairs(SplitTag::DetectorTrain, attack_name);
  const std::uint64_t seed = feature_seed(SplitTag::DetectorTrain);
  double best_sigma = settings_.rand1_sigmas.front();
  double best_auc = -1.0;
  for (double sigma : settings_.rand1_sigmas) {
    const auto b = rand1_scores(p.benign, sigma, seed);
    const auto a = rand1_scores(p.adversarial, sigma, seed);
    const double auc = roc_auc(a, b).auc;
    if (auc > best_auc) {
      best_auc = auc;
      best_sigma = sigma;
    }
  }
  return best_sigma;
}

ExperimentReport Experiment::run_detection() {
  const auto start = Clock::now();
  ExperimentReport report;
  report.name = "detection";
  report.config = settings_to_json(settings_);

  const std::string source = to_string(settings_.attacks.front().kind);
  std::vector<std::string> columns;
  for (const auto& a : settings_.attacks) columns.push_back(to_string(a.kind));
  for (const auto& a : settings_.attacks) {
    if (to_string(a.kind) != source) columns.push_back(source + "->" + to_string(a.kind));
  }
  ReportTable auc = make_table("auc", {"agd", "rand1", "median"}, columns, true);

  const AgdConfig agd = extraction_config();
  const auto select = select_k(settings_.agd.k, agd.layers.size());
  const std::uint64_t eval_seed = feature_seed(SplitTag::Eval);

  for (const auto& a : settings_.attacks) {
    const std::string name = to_string(a.kind);
    for (SplitTag split : {SplitTag::DetectorTrain, SplitTag::Eval}) {
      const PairedSet& p = pairs(split, name);
      report.metrics.emplace_back("success_rate." + name + "." + to_string(split), p.success_rate());
      report.metrics.emplace_back("eligible." + name + "." + to_string(split),
                                  static_cast<double>(p.size()));
    }
    const PairedSet& eval = pairs(SplitTag::Eval, name);
    auc.set("agd", name, detector_auc(name, name, agd, select));
    const double sigma = select_rand1_sigma(name);
    report.metrics.emplace_back("rand1_sigma." + name, sigma);
    auc.set("rand1", name,
            roc_auc(rand1_scores(eval.adversarial, sigma, eval_seed),
                    rand1_scores(eval.benign, sigma, eval_seed))
                .auc);
    auc.set("median", name,
            roc_auc(median_scores(eval.adversarial), median_scores(eval.benign)).auc);
  }

  const double source_sigma = select_rand1_sigma(source);
  for (const auto& a : settings_.attacks) {
    const std::string name = to_string(a.kind);
    if (name == source) continue;
    const std::string col = source + "->" + name;
    const PairedSet& eval = pairs(SplitTag::Eval, name);
    auc.set("agd", col, detector_auc(source, name, agd, select));
    auc.set("rand1", col,
            roc_auc(rand1_scores(eval.adversarial, source_sigma, eval_seed),
                    rand1_scores(eval.benign, source_sigma, eval_seed))
                .auc);
    auc.set("median", col, auc.at("median", name));
  }
  report.tables.push_back(std::move(auc));
  report.runtime_seconds = seconds_since(start);
  return report;
}

ExperimentReport Experiment::score_separation() {
  const auto start = Clock::now();
  ExperimentReport report;
  report.name = "score_separation";
  const AgdConfig agd = extraction_config();
  report.config = {{"agd", agd_to_json(agd)}, {"k", settings_.agd.k}};

  std::vector<std::string> attacks;
  for (const auto& a : settings_.attacks) {
    if (a.kind != AttackKind::Boundary) attacks.push_back(to_string(a.kind));
  }
  ReportTable sep = make_table(
      "separation", attacks,
      {"pairs", "median_alpha_benign", "median_alpha_adversarial", "p_alpha",
       "mean_beta_gamma_benign", "mean_beta_gamma_adversarial", "p_beta_gamma"},
      false);
  for (const auto& name : attacks) {
    const FeatureSet& fs = features(SplitTag::Eval, name, agd);
    const auto ab = column(fs.benign, alpha_top);
    const auto aa = column(fs.adversarial, alpha_top);
    const std::size_t k = settings_.agd.k;
    const auto bb = column(fs.benign, [k](const AgdFeatureVector& v) { return beta_gamma_topk(v, k); });
    const auto ba = column(fs.adversarial, [k](const AgdFeatureVector& v) { return beta_gamma_topk(v, k); });
    sep.set(name, "pairs", static_cast<double>(ab.size()));
    if (ab.empty() || aa.empty()) continue;
    sep.set(name, "median_alpha_benign", median(ab));
    sep.set(name, "median_alpha_adversarial", median(aa));
    sep.set(name, "p_alpha", mann_whitney_greater(ab, aa).p_value);
    sep.set(name, "mean_beta_gamma_benign", mean(bb));
    sep.set(name, "mean_beta_gamma_adversarial", mean(ba));
    sep.set(name, "p_beta_gamma", mann_whitney_greater(bb, ba).p_value);

    // Plot data: per-example alpha_a, beta_a, gamma_a at every tap layer.
    std::vector<std::string> rows, cols;
    for (std::size_t m = 0; m < agd.layers.size(); ++m) {
      for (const char* s : {"alpha_a@", "beta_a@", "gamma_a@"}) cols.push_back(s + agd.layers[m]);
    }
    for (std::size_t i = 0; i < fs.benign.size(); ++i) rows.push_back("benign_" + std::to_string(i));
    for (std::size_t i = 0; i < fs.adversarial.size(); ++i) rows.push_back("adversarial_" + std::to_string(i));
    ReportTable dist = make_table("distribution_" + name, rows, cols, false);
    std::size_t r = 0;
    for (const auto* set : {&fs.benign, &fs.adversarial}) {
      for (const auto& v : *set) {
        for (std::size_t m = 0; m < agd.layers.size(); ++m) {
          dist.values[r][3 * m] = v.alpha(m, 0);
          dist.values[r][3 * m + 1] = v.beta(m, 0);
          dist.values[r][3 * m + 2] = v.gamma(m, 0);
        }
        ++r;
      }
    }
    report.tables.push_back(std::move(dist));
  }
  report.tables.insert(report.tables.begin(), std::move(sep));
  report.runtime_seconds = seconds_since(start);
  return report;
}

ExperimentReport Experiment::sweep_k() {
  const auto start = Clock::now();
  ExperimentReport report;
  report.name = "sweep_k";
  const AgdConfig agd = extraction_config();
  const std::string source = to_string(settings_.attacks.front().kind);
  report.config = {{"agd", agd_to_json(agd)}, {"attack", source}, {"k_values", settings_.k_values}};
  std::vector<std::string> cols;
  for (auto k : settings_.k_values) cols.push_back("K=" + std::to_string(k));
  ReportTable t = make_table("auc", {"agd"}, cols, true);
  for (auto k : settings_.k_values) {
    t.set("agd", "K=" + std::to_string(k),
          detector_auc(source, source, agd, select_k(k, agd.layers.size())));
  }
  report.tables.push_back(std::move(t));
  report.runtime_seconds = seconds_since(start);
  return report;
}

ExperimentReport Experiment::sweep_transform_count() {
  const auto start = Clock::now();
  ExperimentReport report;
  report.name = "sweep_transform_count";
  const AgdConfig agd = extraction_config();
  const std::string source = to_string(settings_.attacks.front().kind);
  report.config = {{"agd", agd_to_json(agd)},
                   {"attack", source},
                   {"transform_counts", settings_.transform_counts}};
  std::vector<std::string> cols;
  for (auto t : settings_.transform_counts) cols.push_back("T=" + std::to_string(t));
  ReportTable table = make_table("auc", {"agd"}, cols, true);

  const auto per_transform = select_k(settings_.agd.k, agd.layers.size());
  auto concat = [&](SplitTag split, std::size_t count, bool adversarial) {
    std::vector<std::vector<double>> rows;
    for (std::size_t j = 0; j < count; ++j) {
      const FeatureSet& fs = features(split, source, agd, j);
      const auto& vs = adversarial ? fs.adversarial : fs.benign;
      if (rows.empty()) rows.resize(vs.size());
      for (std::size_t i = 0; i < vs.size(); ++i) {
        const auto part = per_transform(vs[i]);
        rows[i].insert(rows[i].end(), part.begin(), part.end());
      }
    }
    return rows;
  };

  for (auto count : settings_.transform_counts) {
    require(count >= 1, ErrorKind::Config, "transform count must be >= 1");
    FeatureMatrix train;
    std::vector<int> labels;
    for (bool adv : {false, true}) {
      for (auto& row : concat(SplitTag::DetectorTrain, count, adv)) {
        train.rows.push_back(std::move(row));
        labels.push_back(adv ? 1 : 0);
      }
    }
    const Forest forest = fit(train, labels, settings_.forest);
    std::vector<double> b, a;
    for (const auto& row : concat(SplitTag::Eval, count, false)) b.push_back(forest.score(row));
    for (const auto& row : concat(SplitTag::Eval, count, true)) a.push_back(forest.score(row));
    table.set("agd", "T=" + std::to_string(count), roc_auc(a, b).auc);
  }
  report.tables.push_back(std::move(table));
  report.runtime_seconds = seconds_since(start);
  return report;
}

ExperimentReport Experiment::sweep_layers() {
  const auto start = Clock::now();
  ExperimentReport report;
  report.name = "sweep_layers";
  AgdConfig agd = extraction_config();
  agd.layers.clear();
  const Graph& g = model_.graph();
  for (NodeId id = 0; id <= g.logits(); ++id) agd.layers.push_back(g.node(id).name);
  const std::string source = to_string(settings_.attacks.front().kind);
  report.config = {{"agd", agd_to_json(agd)}, {"attack", source}};

  std::vector<std::string> cols;
  for (std::size_t r = 0; r < agd.k; ++r) {
    for (const char* s : {"alpha@", "beta@", "gamma@"}) cols.push_back(s + std::to_string(r + 1));
  }
  ReportTable diff = make_table("median_difference", agd.layers, cols, false);
  ReportTable auc = make_table("auc", agd.layers, {"auc"}, true);
  const FeatureSet& fs = features(SplitTag::Eval, source, agd);
  for (std::size_t m = 0; m < agd.layers.size(); ++m) {
    for (std::size_t r = 0; r < agd.k; ++r) {
      for (std::size_t which = 0; which < 3; ++which) {
        auto pick = [&](const AgdFeatureVector& v) { return v.scores[v.offset(m, r, which)]; };
        diff.values[m][3 * r + which] = median(column(fs.benign, pick)) - median(column(fs.adversarial, pick));
      }
    }
    const std::vector<std::size_t> layer{m};
    const std::size_t k = settings_.agd.k;
    auc.set(agd.layers[m], "auc", detector_auc(source, source, agd, [k, layer](const AgdFeatureVector& v) {
              return select_scores(v, k, layer);
            }));
  }
  report.tables.push_back(std::move(diff));
  report.tables.push_back(std::move(auc));
  report.runtime_seconds = seconds_since(start);
  return report;
}

ExperimentReport Experiment::sweep_grid() {
  const auto start = Clock::now();
  ExperimentReport report;
  report.name = "sweep_grid";
  const std::string source = to_string(settings_.attacks.front().kind);
  report.config = {{"attack", source},
                   {"k", settings_.agd.k},
                   {"mu_values", settings_.mu_values},
                   {"step_values", settings_.step_values}};
  std::vector<std::string> rows, cols;
  for (double mu : settings_.mu_values) rows.push_back("mu=" + fmt(mu));
  for (double step : settings_.step_values) cols.push_back("eps0=" + fmt(step));
  ReportTable t = make_table("auc", rows, cols, true);
  for (std::size_t i = 0; i < settings_.mu_values.size(); ++i) {
    for (std::size_t j = 0; j < settings_.step_values.size(); ++j) {
      AgdConfig agd = settings_.agd;
      agd.perturbation.magnitude = settings_.mu_values[i];
      agd.perturbation.seed = 0;
      agd.step = settings_.step_values[j];
      t.values[i][j] = detector_auc(source, source, agd, select_k(agd.k, agd.layers.size()));
    }
  }
  report.tables.push_back(std::move(t));
  report.runtime_seconds = seconds_since(start);
  return report;
}

ExperimentReport Experiment::ablation_scores() {
  const auto start = Clock::now();
  ExperimentReport report;
  report.name = "ablation";
  const AgdConfig agd = extraction_config();
  const std::string source = to_string(settings_.attacks.front().kind);
  report.config = {{"agd", agd_to_json(agd)}, {"attack", source}};
  const std::vector<ScoreMask> masks{{true, false, false}, {false, true, false},
                                     {false, false, true}, {true, true, false},
                                     {true, false, true},  {false, true, true},
                                     {true, true, true}};
  std::vector<std::string> rows;
  for (const auto& m : masks) rows.push_back(m.name());
  std::vector<std::size_t> ks{1, std::min<std::size_t>(4, agd.k)};
  std::vector<std::string> cols;
  for (auto k : ks) cols.push_back("K=" + std::to_string(k));
  ReportTable t = make_table("auc", rows, cols, true);
  for (const auto& mask : masks) {
    for (auto k : ks) {
      t.set(mask.name(), "K=" + std::to_string(k),
            detector_auc(source, source, agd, select_k(k, agd.layers.size(), mask)));
    }
  }
  report.tables.push_back(std::move(t));
  report.runtime_seconds = seconds_since(start);
  return report;
}

ExperimentReport Experiment::whitebox_eval() {
  const auto start = Clock::now();
  ExperimentReport report;
  report.name = "whitebox";
  AttackConfig adaptive = settings_.adaptive;
  adaptive.kind = AttackKind::AdaptivePgd;
  validate(adaptive);
  AttackConfig plain = adaptive;
  plain.kind = AttackKind::Pgd;

  AgdConfig agd = settings_.agd;
  agd.perturbation.seed = 0;
  report.config = {{"adaptive", attack_to_json(adaptive)},
                   {"agd", agd_to_json(agd)},
                   {"examples", settings_.whitebox_examples},
                   {"detector_training_attack", "pgd"}};

  // Subset: the first correctly classified eval examples.
  std::vector<std::size_t> subset;
  const LabeledSet& eval = splits_.eval;
  for (std::size_t i = 0; i < eval.size() && subset.size() < settings_.whitebox_examples; ++i) {
    if (model_.predict(eval.images[i]).label == eval.labels[i]) subset.push_back(i);
  }
  require(!subset.empty(), ErrorKind::Data, "no correctly classified eval examples");

  const double sigma = select_rand1_sigma("pgd");
  const std::string& layer = settings_.baseline_layer;
  const std::uint64_t seed = derive_seed(settings_.seed, stream_id("whitebox"));

  std::vector<AttackResult> plain_r(subset.size()), agd_r(subset.size()), rand1_r(subset.size());
  parallel_for(subset.size(), settings_.jobs, [&](std::size_t i) {
    const Tensor& x = eval.images[subset[i]];
    const std::size_t y = eval.labels[subset[i]];
    AttackConfig local = adaptive;
    local.seed = derive_seed(seed, stream_id("adaptive-example"), i);
    plain_r[i] = pgd(model_, x, y, plain);
    agd_r[i] = adaptive_pgd_agd(model_, x, y, index_, agd, local);
    rand1_r[i] = adaptive_pgd(
        model_, x, y,
        [&](const Tensor& z, std::size_t t) {
          return rand1_objective(model_, z, sigma, layer,
                                 derive_seed(local.seed, stream_id("adaptive-rand1"), t));
        },
        local);
  });

  auto rate = [](const std::vector<AttackResult>& rs) {
    double s = 0.0;
    for (const auto& r : rs) s += r.success;
    return s / static_cast<double>(rs.size());
  };
  ReportTable success = make_table("attack_success", {"pgd", "adaptive-agd", "adaptive-rand1"},
                                   {"success_rate"}, false);
  success.set("pgd", "success_rate", rate(plain_r));
  success.set("adaptive-agd", "success_rate", rate(agd_r));
  success.set("adaptive-rand1", "success_rate", rate(rand1_r));

  ReportTable auc = make_table("detection_auc", {"agd", "rand1"}, {"auc"}, true);
  const auto select = select_k(agd.k, agd.layers.size());
  const Forest forest = train_detector("pgd", extraction_config(), select);
  {
    std::vector<Tensor> benign, adv;
    for (std::size_t i = 0; i < subset.size(); ++i) {
      if (!agd_r[i].success) continue;
      benign.push_back(eval.images[subset[i]]);
      adv.push_back(agd_r[i].adversarial);
    }
    report.metrics.emplace_back("pairs.agd", static_cast<double>(adv.size()));
    if (!adv.empty()) {
      AgdConfig extract_cfg = extraction_config();
      const auto fb = extract_batch(model_, benign, index_, extract_cfg, seed, settings_.jobs);
      const auto fa = extract_batch(model_, adv, index_, extract_cfg, seed, settings_.jobs);
      std::vector<double> sb, sa;
      for (const auto& v : fb) sb.push_back(forest.score(select(v)));
      for (const auto& v : fa) sa.push_back(forest.score(select(v)));
      auc.set("agd", "auc", roc_auc(sa, sb).auc);
    }
  }
  {
    std::vector<Tensor> benign, adv;
    for (std::size_t i = 0; i < subset.size(); ++i) {
      if (!rand1_r[i].success) continue;
      benign.push_back(eval.images[subset[i]]);
      adv.push_back(rand1_r[i].adversarial);
    }
    report.metrics.emplace_back("pairs.rand1", static_cast<double>(adv.size()));
    if (!adv.empty()) {
      auc.set("rand1", "auc",
              roc_auc(rand1_scores(adv, sigma, seed), rand1_scores(benign, sigma, seed)).auc);
    }
  }
  report.metrics.emplace_back("lambda", adaptive.lambda);
  report.metrics.emplace_back("epsilon", adaptive.epsilon);
  report.metrics.emplace_back("steps", static_cast<double>(adaptive.steps));
  report.metrics.emplace_back("rand1_sigma", sigma);
  report.tables.push_back(std::move(success));
  report.tables.push_back(std::move(auc));
  report.runtime_seconds = seconds_since(start);
  return report;
}

ReportTable consistency_table(const TrainedModel& model, const Tensor& example,
                              const AgdConfig& agd, const std::string& layer,
                              std::size_t n_transforms, std::uint64_t seed) {
  ReportTable t = make_table("consistency", {},
                             {"alpha_a", "r", "magnitude", "angle", "alpha_a_norm", "r_norm"},
                             false);
  if (n_transforms == 0) return t;
  const std::size_t a = model.predict(example).label;
  const Tensor base = model.tap(example, layer);
  const Tensor dq = agd_delta(model, example, a, agd.step, layer);
  for (std::size_t j = 0; j < n_transforms; ++j) {
    PerturbationSpec spec = agd.perturbation;
    spec.seed = derive_seed(seed, stream_id("viz-transform"), j);
    const Tensor p = perturb(example, spec);
    const Tensor dp = agd_delta(model, p, a, agd.step, layer);
    const Tensor variation = model.tap(p, layer) - base;
    t.rows.push_back("transform_" + std::to_string(j));
    t.values.push_back({cosine_similarity(dq, dp).value, l1_norm(variation), l2_norm(dp),
                        cosine_similarity(variation, dp).value, 0.0, 0.0});
  }
  for (std::size_t c : {0u, 1u}) {
    double lo = t.values[0][c], hi = t.values[0][c];
    for (const auto& row : t.values) {
      lo = std::min(lo, row[c]);
      hi = std::max(hi, row[c]);
    }
    for (auto& row : t.values) row[c + 4] = hi > lo ? (row[c] - lo) / (hi - lo) : 0.0;
  }
  return t;
}

ExperimentReport Experiment::consistency_viz(std::size_t n_transforms) {
  const auto start = Clock::now();
  ExperimentReport report;
  report.name = "consistency";
  const std::string source = to_string(settings_.attacks.front().kind);
  const std::string layer = settings_.agd.layers.back();
  report.config = {{"attack", source}, {"layer", layer}, {"transforms", n_transforms}};
  const PairedSet& p = pairs(SplitTag::Eval, source);
  require(!p.adversarial.empty(), ErrorKind::Data, "no adversarial example for visualisation");
  ReportTable t = consistency_table(model_, p.adversarial.front(), settings_.agd, layer, n_transforms,
                                    derive_seed(settings_.seed, stream_id("viz")));
  report.metrics.emplace_back("example_id", static_cast<double>(p.ids.front()));
  if (!t.values.empty()) {
    std::vector<double> alpha, r_norm;
    for (const auto& row : t.values) {
      alpha.push_back(row[0]);
      r_norm.push_back(row[5]);
    }
    report.metrics.emplace_back("variance_alpha", variance(alpha));
    report.metrics.emplace_back("variance_r_norm", variance(r_norm));
  }
  report.tables.push_back(std::move(t));
  report.runtime_seconds = seconds_since(start);
  return report;
}

std::vector<ExperimentReport> run_all(Experiment& experiment) {
  std::vector<ExperimentReport> out;
  out.push_back(experiment.run_detection());
  out.push_back(experiment.score_separation());
  out.push_back(experiment.sweep_k());
  out.push_back(experiment.sweep_transform_count());
  out.push_back(experiment.sweep_layers());
  out.push_back(experiment.sweep_grid());
  out.push_back(experiment.ablation_scores());
  out.push_back(experiment.whitebox_eval());
  out.push_back(experiment.consistency_viz(experiment.settings().viz_transforms));
  return out;
}

}  // namespace agd
