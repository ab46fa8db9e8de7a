#pragma once

#include <span>
#include <vector>

namespace agd {

/// ROC curve from the highest threshold down. Point 0 is (0, 0) at +inf.
struct RocResult {
  std::vector<double> thresholds;
  std::vector<double> tpr;
  std::vector<double> fpr;
  double auc = 0.5;
};

/// ROC-AUC with positives scoring high: P(s+ > s-) + 0.5 P(s+ = s-), from a
/// sorted sweep. Tied scores form one diagonal segment of the curve, so the
/// trapezoidal area equals the pairwise statistic.
RocResult roc_auc(std::span<const double> positive, std::span<const double> negative);

/// Trapezoidal area under a stored curve.
double trapezoid_area(const RocResult& roc);

struct MannWhitneyResult {
  double u = 0.0;        ///< U statistic of the first sample
  double z = 0.0;        ///< tie-corrected normal approximation
  double p_value = 1.0;  ///< one-sided: first sample stochastically greater
};

/// One-sided Mann-Whitney U test of "x tends to exceed y".
MannWhitneyResult mann_whitney_greater(std::span<const double> x, std::span<const double> y);

double median(std::vector<double> values);
double mean(std::span<const double> values);
double variance(std::span<const double> values);

}  // namespace agd
