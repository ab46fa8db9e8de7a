#include "agd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "agd/common.hpp"

namespace agd {

namespace {

// Sorting with NaN breaks strict weak ordering, so reject it up front.
void require_finite(std::span<const double> values, const char* what) {
  require(std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); }),
          ErrorKind::Numeric, std::string(what) + " inputs must be finite");
}

}  // namespace

RocResult roc_auc(std::span<const double> positive, std::span<const double> negative) {
  require(!positive.empty() && !negative.empty(), ErrorKind::Data,
          "AUC needs non-empty positive and negative score lists");
  require_finite(positive, "AUC");
  require_finite(negative, "AUC");
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> items;
  items.reserve(positive.size() + negative.size());
  for (double s : positive) items.push_back({s, true});
  for (double s : negative) items.push_back({s, false});
  std::sort(items.begin(), items.end(),
            [](const Item& a, const Item& b) { return a.score > b.score; });

  const double np = static_cast<double>(positive.size());
  const double nn = static_cast<double>(negative.size());
  RocResult roc;
  roc.thresholds.push_back(std::numeric_limits<double>::infinity());
  roc.tpr.push_back(0.0);
  roc.fpr.push_back(0.0);

  // Integer counts keep the area exact: sum over tie groups of
  // neg_in_group * (pos_before + pos_in_group / 2).
  double tp = 0.0;
  double fp = 0.0;
  double area2 = 0.0;  // twice the pair count
  for (std::size_t i = 0; i < items.size();) {
    std::size_t j = i;
    double gp = 0.0;
    double gn = 0.0;
    while (j < items.size() && items[j].score == items[i].score) {
      (items[j].positive ? gp : gn) += 1.0;
      ++j;
    }
    area2 += gn * (2.0 * tp + gp);
    tp += gp;
    fp += gn;
    roc.thresholds.push_back(items[i].score);
    roc.tpr.push_back(tp / np);
    roc.fpr.push_back(fp / nn);
    i = j;
  }
  roc.auc = area2 / (2.0 * np * nn);
  return roc;
}

double trapezoid_area(const RocResult& roc) {
  double area = 0.0;
  for (std::size_t i = 1; i < roc.fpr.size(); ++i) {
    area += (roc.fpr[i] - roc.fpr[i - 1]) * 0.5 * (roc.tpr[i] + roc.tpr[i - 1]);
  }
  return area;
}

MannWhitneyResult mann_whitney_greater(std::span<const double> x, std::span<const double> y) {
  require(!x.empty() && !y.empty(), ErrorKind::Data, "Mann-Whitney needs two non-empty samples");
  require_finite(x, "Mann-Whitney");
  require_finite(y, "Mann-Whitney");
  struct Item {
    double v;
    bool first;
  };
  std::vector<Item> all;
  for (double v : x) all.push_back({v, true});
  for (double v : y) all.push_back({v, false});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.v < b.v; });

  const double n1 = static_cast<double>(x.size());
  const double n2 = static_cast<double>(y.size());
  const double n = n1 + n2;
  double rank_sum = 0.0;
  double tie_term = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].v == all[i].v) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].first) rank_sum += avg_rank;
    }
    i = j;
  }

  MannWhitneyResult r;
  r.u = rank_sum - n1 * (n1 + 1.0) / 2.0;
  const double mu = n1 * n2 / 2.0;
  const double var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (var <= 0.0) {
    r.z = 0.0;
    r.p_value = r.u > mu ? 0.0 : 1.0;
    return r;
  }
  // Continuity correction toward the null.
  r.z = (r.u - mu - 0.5) / std::sqrt(var);
  r.p_value = 0.5 * std::erfc(r.z / std::sqrt(2.0));
  return r;
}

double median(std::vector<double> values) {
  require(!values.empty(), ErrorKind::Data, "median of an empty list");
  require_finite(values, "median");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double mean(std::span<const double> values) {
  require(!values.empty(), ErrorKind::Data, "mean of an empty list");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double variance(std::span<const double> values) {
  const double m = mean(values);
  double acc = 0.0;
  for (double v : values) acc += (v - m) * (v - m);
  return acc / static_cast<double>(values.size());
}

}  // namespace agd
