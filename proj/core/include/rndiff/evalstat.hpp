#pragma once

#include <string>
#include <vector>

namespace rndiff {

struct RocPoint {
  double threshold = 0.0;  // classify score >= threshold as positive
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // anchored at (0,0) and (1,1)
  double auc = 0.0;
};

/// Trapezoidal ROC over distinct-score thresholds. Tied scores collapse into
/// one threshold group, which makes the area equal the Mann-Whitney
/// U / (n1 * n0) with ties counted 0.5. Labels are 0/1, positive = 1.
RocCurve roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

std::string roc_to_csv(const RocCurve& curve);

struct ThresholdMetrics {
  int tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0;
  double sensitivity = 0.0;  // recall of the positive (necrosis) class
  double specificity = 0.0;
};

ThresholdMetrics threshold_metrics(const std::vector<double>& scores,
                                   const std::vector<int>& labels,
                                   double tau = 0.5);

struct Dispersion {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation
};

/// Mean +- sample SD across per-fold metric values; needs >= 2 values.
Dispersion fold_dispersion(const std::vector<double>& values);

/// Report convention: three decimals, e.g. "0.916 ± 0.008".
std::string format_dispersion(const Dispersion& d);

struct TestResult {
  std::string name;
  double statistic = 0.0;
  double p_value = 1.0;
  std::string sidedness;
  std::string method;  // exact vs. approximation, conventions, df
};

/// Exact test on a 2xK contingency table (K = 2 is the classic Fisher test,
/// K > 2 the Freeman-Halton extension), enumerating all tables with the
/// observed margins. Two-sided by probability mass; with mid_p the tables
/// tied with the observed one count half weight, which tracks the p-values
/// clinical software reports for weakly significant tables much better than
/// the full-weight convention. statistic = observed table probability.
TestResult fisher_exact(const std::vector<std::vector<long long>>& table,
                        bool mid_p = true);

enum class MwMethod { automatic, exact, normal_approx };

/// Two-sided Mann-Whitney U with midrank ties; statistic = U of the first
/// sample (pairs where a beats b, ties half). Exact enumeration over all
/// C(n, n_a) group assignments when n_a + n_b <= 12, otherwise a normal
/// approximation with tie-corrected variance and continuity correction.
TestResult mann_whitney_u(const std::vector<double>& a,
                          const std::vector<double>& b,
                          MwMethod method = MwMethod::automatic);

/// Shapiro-Wilk normality test, 3 <= n <= 5000, via the Royston AS R94
/// approximation. statistic = W.
TestResult shapiro_wilk(const std::vector<double>& x);

/// Paired two-sided t-test; errors on zero-variance differences.
TestResult paired_t(const std::vector<double>& a, const std::vector<double>& b);

// Numeric kernels shared by the tests above, exposed for direct checking.
double normal_cdf(double z);
double normal_quantile(double p);
double incomplete_beta(double a, double b, double x);  // regularized I_x(a,b)
double student_t_two_sided(double t, int df);

}  // namespace rndiff
