#include "agd/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "agd/common.hpp"
#include "agd/serialization.hpp"

namespace agd {

namespace {

double gini(double pos, double total) {
  if (total <= 0.0) return 0.0;
  const double p = pos / total;
  return 1.0 - p * p - (1.0 - p) * (1.0 - p);
}

constexpr double kImpurityTolerance = 1e-12;

struct TreeBuilder {
  const FeatureMatrix& x;
  std::span<const int> labels;
  const ForestConfig& config;
  std::size_t mtry;
  RandomEngine rng;
  DecisionTree tree;

  int make_leaf(std::span<const std::size_t> rows) {
    double pos = 0.0;
    for (auto r : rows) pos += labels[r];
    const int id = static_cast<int>(tree.feature.size());
    tree.feature.push_back(-1);
    tree.threshold.push_back(0.0);
    tree.left.push_back(-1);
    tree.right.push_back(-1);
    tree.leaf_adversarial.push_back(pos / static_cast<double>(rows.size()));
    return id;
  }

  std::vector<std::size_t> candidate_features() {
    const std::size_t d = x.width();
    std::vector<std::size_t> features(d);
    std::iota(features.begin(), features.end(), 0);
    if (mtry < d) {
      for (std::size_t i = 0; i < mtry; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, d - 1);
        std::swap(features[i], features[pick(rng)]);
      }
      features.resize(mtry);
      std::sort(features.begin(), features.end());
    }
    return features;
  }

  int grow(std::vector<std::size_t> rows, std::size_t depth) {
    const double n = static_cast<double>(rows.size());
    double pos = 0.0;
    for (auto r : rows) pos += labels[r];
    const double parent = gini(pos, n);
    if (depth >= config.max_depth || parent <= 0.0 ||
        rows.size() < 2 * config.min_samples_leaf) {
      return make_leaf(rows);
    }

    double best = parent - kImpurityTolerance;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::pair<double, int>> column(rows.size());
    for (auto f : candidate_features()) {
      for (std::size_t i = 0; i < rows.size(); ++i) column[i] = {x.rows[rows[i]][f], labels[rows[i]]};
      std::sort(column.begin(), column.end());
      double left_pos = 0.0;
      for (std::size_t i = 0; i + 1 < column.size(); ++i) {
        left_pos += column[i].second;
        if (!(column[i].first < column[i + 1].first)) continue;
        const std::size_t nl = i + 1;
        const std::size_t nr = column.size() - nl;
        if (nl < config.min_samples_leaf || nr < config.min_samples_leaf) continue;
        const double dl = static_cast<double>(nl);
        const double dr = static_cast<double>(nr);
        const double impurity =
            (dl * gini(left_pos, dl) + dr * gini(pos - left_pos, dr)) / n;
        if (impurity < best - kImpurityTolerance ||
            (best_feature < 0 && impurity < best)) {
          best = impurity;
          best_feature = static_cast<int>(f);
          double t = 0.5 * (column[i].first + column[i + 1].first);
          if (!(t < column[i + 1].first)) t = column[i].first;
          best_threshold = t;
        }
      }
    }
    if (best_feature < 0) return make_leaf(rows);

    std::vector<std::size_t> left_rows, right_rows;
    for (auto r : rows) {
      (x.rows[r][static_cast<std::size_t>(best_feature)] <= best_threshold ? left_rows : right_rows)
          .push_back(r);
    }
    const int id = static_cast<int>(tree.feature.size());
    tree.feature.push_back(best_feature);
    tree.threshold.push_back(best_threshold);
    tree.left.push_back(-1);
    tree.right.push_back(-1);
    tree.leaf_adversarial.push_back(pos / n);
    rows.clear();
    rows.shrink_to_fit();
    const int l = grow(std::move(left_rows), depth + 1);
    const int r = grow(std::move(right_rows), depth + 1);
    tree.left[static_cast<std::size_t>(id)] = l;
    tree.right[static_cast<std::size_t>(id)] = r;
    return id;
  }
};

std::size_t resolve_mtry(const ForestConfig& config, std::size_t d) {
  if (config.feature_subsample > 0) return std::min(config.feature_subsample, d);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(d)))));
}

}  // namespace

void validate(const ForestConfig& config) {
  require(config.tree_count >= 1, ErrorKind::Config, "forest needs at least one tree");
  require(config.max_depth >= 1, ErrorKind::Config, "max_depth must be >= 1");
  require(config.min_samples_leaf >= 1, ErrorKind::Config, "min_samples_leaf must be >= 1");
}

double DecisionTree::score(std::span<const double> x) const {
  std::size_t node = 0;
  while (!is_leaf(node)) {
    node = static_cast<std::size_t>(x[static_cast<std::size_t>(feature[node])] <= threshold[node]
                                        ? left[node]
                                        : right[node]);
  }
  return leaf_adversarial[node];
}

std::size_t DecisionTree::depth() const {
  std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
  std::size_t deepest = 0;
  while (!stack.empty()) {
    auto [node, d] = stack.back();
    stack.pop_back();
    deepest = std::max(deepest, d);
    if (!is_leaf(node)) {
      stack.push_back({static_cast<std::size_t>(left[node]), d + 1});
      stack.push_back({static_cast<std::size_t>(right[node]), d + 1});
    }
  }
  return deepest;
}

Forest::Forest(ForestConfig config, std::size_t feature_count, std::vector<DecisionTree> trees)
    : config_(config), feature_count_(feature_count), trees_(std::move(trees)) {
  require(!trees_.empty(), ErrorKind::Config, "forest has no trees");
  for (const auto& t : trees_) {
    const std::size_t n = t.node_count();
    require(n > 0 && t.threshold.size() == n && t.left.size() == n && t.right.size() == n &&
                t.leaf_adversarial.size() == n,
            ErrorKind::Data, "inconsistent tree arrays");
    for (std::size_t i = 0; i < n; ++i) {
      require(t.leaf_adversarial[i] >= 0.0 && t.leaf_adversarial[i] <= 1.0, ErrorKind::Data,
              "leaf probability outside [0,1]");
      if (t.feature[i] >= 0) {
        require(static_cast<std::size_t>(t.feature[i]) < feature_count_ && t.left[i] > static_cast<int>(i) &&
                    t.right[i] > static_cast<int>(i) && static_cast<std::size_t>(t.left[i]) < n &&
                    static_cast<std::size_t>(t.right[i]) < n,
                ErrorKind::Data, "tree node references out of range");
      }
    }
  }
}

double Forest::score(std::span<const double> x) const {
  if (x.size() != feature_count_) {
    fail(ErrorKind::Config, "feature vector has " + std::to_string(x.size()) +
                                " entries, forest expects " + std::to_string(feature_count_));
  }
  double total = 0.0;
  for (const auto& t : trees_) total += t.score(x);
  return std::clamp(total / static_cast<double>(trees_.size()), 0.0, 1.0);
}

std::vector<double> Forest::score_all(const FeatureMatrix& x) const {
  std::vector<double> out;
  out.reserve(x.size());
  for (const auto& row : x.rows) out.push_back(score(row));
  return out;
}

DecisionTree grow_tree(const FeatureMatrix& x, std::span<const int> labels,
                       std::span<const std::size_t> rows, const ForestConfig& config,
                       std::uint64_t seed) {
  validate(config);
  require(!rows.empty(), ErrorKind::Data, "cannot grow a tree on zero rows");
  TreeBuilder builder{x, labels, config, resolve_mtry(config, x.width()),
                      RandomEngine(derive_seed(seed, stream_id("tree-grow"))), {}};
  builder.grow(std::vector<std::size_t>(rows.begin(), rows.end()), 0);
  return std::move(builder.tree);
}

Forest fit(const FeatureMatrix& x, std::span<const int> labels, const ForestConfig& config) {
  validate(config);
  require(x.size() == labels.size(), ErrorKind::Config, "feature rows and labels differ in count");
  require(!x.rows.empty() && x.width() > 0, ErrorKind::Data, "empty training matrix");
  std::size_t positives = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(x.rows[i].size() == x.width(), ErrorKind::Config, "ragged feature matrix");
    require(labels[i] == 0 || labels[i] == 1, ErrorKind::Config, "labels must be 0 or 1");
    positives += static_cast<std::size_t>(labels[i]);
  }
  require(positives > 0 && positives < x.size(), ErrorKind::Data,
          "detector training needs both benign and adversarial examples");

  std::vector<std::size_t> canonical(x.size());
  std::iota(canonical.begin(), canonical.end(), 0);
  std::stable_sort(canonical.begin(), canonical.end(), [&](std::size_t a, std::size_t b) {
    if (x.rows[a] != x.rows[b]) return x.rows[a] < x.rows[b];
    return labels[a] < labels[b];
  });

  std::vector<DecisionTree> trees;
  trees.reserve(config.tree_count);
  const std::size_t n = x.size();
  for (std::size_t t = 0; t < config.tree_count; ++t) {
    const std::uint64_t tree_seed = derive_seed(config.seed, stream_id("tree"), t);
    std::vector<std::size_t> rows;
    if (config.bootstrap) {
      RandomEngine rng(derive_seed(tree_seed, stream_id("bootstrap")));
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      rows.reserve(n);
      for (std::size_t i = 0; i < n; ++i) rows.push_back(canonical[pick(rng)]);
    } else {
      rows = canonical;
    }
    trees.push_back(grow_tree(x, labels, rows, config, tree_seed));
  }
  return Forest(config, x.width(), std::move(trees));
}

ThresholdResult choose_threshold(std::span<const double> benign, std::span<const double> adversarial,
                                 ThresholdCriterion criterion, double target_fpr) {
  require(!benign.empty() && !adversarial.empty(), ErrorKind::Data,
          "threshold selection needs benign and adversarial scores");
  auto rates = [&](double t) {
    const double tp = static_cast<double>(std::count_if(adversarial.begin(), adversarial.end(),
                                                        [t](double s) { return s > t; }));
    const double fp = static_cast<double>(std::count_if(benign.begin(), benign.end(),
                                                        [t](double s) { return s > t; }));
    return std::pair{tp / static_cast<double>(adversarial.size()),
                     fp / static_cast<double>(benign.size())};
  };

  ThresholdResult result;
  if (criterion == ThresholdCriterion::FprAt) {
    require(target_fpr >= 0.0 && target_fpr <= 1.0, ErrorKind::Config,
            "target FPR must lie in [0, 1]");
    std::vector<double> b(benign.begin(), benign.end());
    std::sort(b.begin(), b.end());
    const auto allowed = static_cast<std::size_t>(std::floor(target_fpr * static_cast<double>(b.size()) + 1e-12));
    if (allowed >= b.size()) {
      result.threshold = b.front() - 1.0;
    } else {
      // At most `allowed` benign scores may exceed the threshold.
      result.threshold = b[b.size() - allowed - 1];
    }
    std::tie(result.tpr, result.fpr) = rates(result.threshold);
    return result;
  }

  std::vector<double> pooled(benign.begin(), benign.end());
  pooled.insert(pooled.end(), adversarial.begin(), adversarial.end());
  std::sort(pooled.begin(), pooled.end());
  pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());
  std::vector<double> candidates{pooled.front() - 1.0};
  for (std::size_t i = 0; i + 1 < pooled.size(); ++i) {
    candidates.push_back(0.5 * (pooled[i] + pooled[i + 1]));
  }
  candidates.push_back(pooled.back());

  double best_j = -2.0;
  for (double t : candidates) {
    const auto [tpr, fpr] = rates(t);
    if (tpr - fpr > best_j + 1e-15) {
      best_j = tpr - fpr;
      result.threshold = t;
      result.tpr = tpr;
      result.fpr = fpr;
    }
  }
  if (best_j <= 0.0) {
    result.degenerate = true;
    result.warning = "benign and adversarial scores are not separable; Youden index <= 0";
  }
  return result;
}

void save_forest(const Forest& forest, const std::filesystem::path& path) {
  Json doc;
  doc["format_version"] = kForestFormatVersion;
  const auto& c = forest.config();
  doc["config"] = {{"tree_count", c.tree_count},
                   {"max_depth", c.max_depth},
                   {"min_samples_leaf", c.min_samples_leaf},
                   {"feature_subsample", c.feature_subsample},
                   {"bootstrap", c.bootstrap},
                   {"seed", c.seed}};
  doc["feature_count"] = forest.feature_count();
  Json trees = Json::array();
  for (const auto& t : forest.trees()) {
    trees.push_back({{"feature", t.feature},
                     {"threshold", encode_f64_base64(t.threshold)},
                     {"left", t.left},
                     {"right", t.right},
                     {"leaf_adversarial", encode_f64_base64(t.leaf_adversarial)}});
  }
  doc["trees"] = std::move(trees);
  write_json_file(path, doc);
}

Forest load_forest(const std::filesystem::path& path) {
  const Json doc = read_json_file(path);
  try {
    const int version = doc.at("format_version").get<int>();
    if (version != kForestFormatVersion) {
      fail(ErrorKind::Data, path.string() + ": forest format_version " + std::to_string(version) +
                                " is not supported (expected " +
                                std::to_string(kForestFormatVersion) + ")");
    }
    const Json& c = doc.at("config");
    ForestConfig config;
    config.tree_count = c.at("tree_count").get<std::size_t>();
    config.max_depth = c.at("max_depth").get<std::size_t>();
    config.min_samples_leaf = c.at("min_samples_leaf").get<std::size_t>();
    config.feature_subsample = c.at("feature_subsample").get<std::size_t>();
    config.bootstrap = c.at("bootstrap").get<bool>();
    config.seed = c.at("seed").get<std::uint64_t>();
    std::vector<DecisionTree> trees;
    for (const auto& t : doc.at("trees")) {
      DecisionTree tree;
      tree.feature = t.at("feature").get<std::vector<int>>();
      tree.threshold = decode_f64_base64(t.at("threshold").get<std::string>());
      tree.left = t.at("left").get<std::vector<int>>();
      tree.right = t.at("right").get<std::vector<int>>();
      tree.leaf_adversarial = decode_f64_base64(t.at("leaf_adversarial").get<std::string>());
      trees.push_back(std::move(tree));
    }
    return Forest(config, doc.at("feature_count").get<std::size_t>(), std::move(trees));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, path.string() + ": malformed forest file: " + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Data) throw;
    fail(ErrorKind::Data, path.string() + ": invalid forest file: " + e.what());
  }
}

}  // namespace agd
