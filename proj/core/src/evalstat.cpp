#include "rndiff/evalstat.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "rndiff/csv.hpp"

namespace rndiff {

namespace {

void require_binary(const std::vector<double>& scores,
                    const std::vector<int>& labels, const char* who) {
  if (scores.size() != labels.size() || scores.empty())
    throw std::invalid_argument(std::string(who) + ": scores and labels must be same nonempty length");
  int pos = 0, neg = 0;
  for (int l : labels) {
    if (l != 0 && l != 1)
      throw std::invalid_argument(std::string(who) + ": labels must be 0 or 1");
    (l == 1 ? pos : neg)++;
  }
  if (pos == 0 || neg == 0)
    throw std::invalid_argument(std::string(who) + ": both classes required");
}

// Midranks of the pooled sample (1-based, ties averaged).
std::vector<double> midranks(const std::vector<double>& pooled) {
  const std::size_t n = pooled.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return pooled[i] < pooled[j]; });
  std::vector<double> rank(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  return rank;
}

}  // namespace

RocCurve roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  require_binary(scores, labels, "roc_auc");
  for (double s : scores)
    if (!std::isfinite(s)) throw std::invalid_argument("roc_auc: non-finite score");
  const int n = static_cast<int>(scores.size());
  int n1 = 0, n0 = 0;
  for (int l : labels) (l == 1 ? n1 : n0)++;

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int i, int j) { return scores[i] > scores[j]; });

  RocCurve curve;
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  int tp = 0, fp = 0;
  double auc = 0.0;
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double prev_fpr = static_cast<double>(fp) / n0;
    const double prev_tpr = static_cast<double>(tp) / n1;
    for (int k = i; k <= j; ++k) (labels[order[k]] == 1 ? tp : fp)++;
    const double cur_fpr = static_cast<double>(fp) / n0;
    const double cur_tpr = static_cast<double>(tp) / n1;
    auc += (cur_fpr - prev_fpr) * (cur_tpr + prev_tpr) * 0.5;
    curve.points.push_back({scores[order[i]], cur_fpr, cur_tpr});
    i = j + 1;
  }
  curve.auc = auc;
  return curve;
}

std::string roc_to_csv(const RocCurve& curve) {
  std::string out = "threshold,fpr,tpr\n";
  for (const RocPoint& p : curve.points)
    out += format_g17(p.threshold) + "," + format_g17(p.fpr) + "," +
           format_g17(p.tpr) + "\n";
  return out;
}

ThresholdMetrics threshold_metrics(const std::vector<double>& scores,
                                   const std::vector<int>& labels, double tau) {
  require_binary(scores, labels, "threshold_metrics");
  ThresholdMetrics m;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= tau;
    if (labels[i] == 1)
      (pred ? m.tp : m.fn)++;
    else
      (pred ? m.fp : m.tn)++;
  }
  const int total = m.tp + m.fp + m.tn + m.fn;
  m.accuracy = static_cast<double>(m.tp + m.tn) / total;
  m.sensitivity = static_cast<double>(m.tp) / (m.tp + m.fn);
  m.specificity = static_cast<double>(m.tn) / (m.tn + m.fp);
  return m;
}

Dispersion fold_dispersion(const std::vector<double>& values) {
  if (values.size() < 2)
    throw std::invalid_argument("fold_dispersion: needs at least 2 values");
  Dispersion d;
  for (double v : values) d.mean += v;
  d.mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - d.mean) * (v - d.mean);
  d.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return d;
}

std::string format_dispersion(const Dispersion& d) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f ± %.3f", d.mean, d.sd);
  return buf;
}

TestResult fisher_exact(const std::vector<std::vector<long long>>& table, bool mid_p) {
  if (table.size() != 2)
    throw std::invalid_argument("fisher_exact: expected a 2xK table");
  const std::size_t K = table[0].size();
  if (K < 2 || table[1].size() != K)
    throw std::invalid_argument("fisher_exact: expected a 2xK table");

  std::vector<long long> cols(K, 0);
  long long r1 = 0, r2 = 0;
  for (std::size_t j = 0; j < K; ++j) {
    if (table[0][j] < 0 || table[1][j] < 0)
      throw std::invalid_argument("fisher_exact: negative count");
    cols[j] = table[0][j] + table[1][j];
    r1 += table[0][j];
    r2 += table[1][j];
  }
  if (r1 == 0 || r2 == 0)
    throw std::invalid_argument("fisher_exact: zero row margin");
  for (long long c : cols)
    if (c == 0) throw std::invalid_argument("fisher_exact: zero column margin");
  const long long N = r1 + r2;

  std::vector<double> lf(static_cast<std::size_t>(N) + 1, 0.0);
  for (long long i = 2; i <= N; ++i)
    lf[i] = lf[i - 1] + std::log(static_cast<double>(i));
  auto lchoose = [&](long long n, long long k) { return lf[n] - lf[k] - lf[n - k]; };

  // Suffix column capacity, for pruning the enumeration bounds.
  std::vector<long long> suffix(K + 1, 0);
  for (std::size_t j = K; j-- > 0;) suffix[j] = suffix[j + 1] + cols[j];

  const double denom = lchoose(N, r1);
  double lp_obs = -denom;
  for (std::size_t j = 0; j < K; ++j) lp_obs += lchoose(cols[j], table[0][j]);
  const double slack = 1e-12 * (1.0 + std::abs(lp_obs));

  double mass = 0.0, tied = 0.0;
  // DFS over row-0 cell values with the margins fixed.
  auto enumerate = [&](auto&& self, std::size_t j, long long rem, double acc) -> void {
    if (j == K) {
      const double lp = acc - denom;
      if (lp <= lp_obs + slack) {
        const double p = std::exp(lp);
        mass += p;
        if (std::abs(lp - lp_obs) <= slack) tied += p;
      }
      return;
    }
    const long long lo = std::max<long long>(0, rem - suffix[j + 1]);
    const long long hi = std::min(cols[j], rem);
    for (long long x = lo; x <= hi; ++x)
      self(self, j + 1, rem - x, acc + lchoose(cols[j], x));
  };
  enumerate(enumerate, 0, r1, 0.0);

  TestResult res;
  res.name = "fisher_exact";
  res.statistic = std::exp(lp_obs);
  res.p_value = std::min(1.0, std::max(0.0, mid_p ? mass - 0.5 * tied : mass));
  res.sidedness = "two-sided";
  res.method = std::string(K == 2 ? "exact hypergeometric enumeration"
                                  : "exact enumeration with fixed margins (Freeman-Halton)") +
               ", probability-mass criterion" +
               (mid_p ? ", mid-p (tied tables half-weighted)" : "");
  return res;
}

TestResult mann_whitney_u(const std::vector<double>& a,
                          const std::vector<double>& b, MwMethod method) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("mann_whitney_u: both samples must be nonempty");
  const int n1 = static_cast<int>(a.size());
  const int n2 = static_cast<int>(b.size());
  const int n = n1 + n2;
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::vector<double> rank = midranks(pooled);

  double r1 = 0.0;
  for (int i = 0; i < n1; ++i) r1 += rank[i];
  const double u = r1 - 0.5 * n1 * (n1 + 1);
  const double mu = 0.5 * static_cast<double>(n1) * n2;
  const double dist_obs = std::abs(u - mu);

  TestResult res;
  res.name = "mann_whitney_u";
  res.statistic = u;
  res.sidedness = "two-sided";

  const bool exact = method == MwMethod::exact ||
                     (method == MwMethod::automatic && n <= 12);
  if (exact) {
    // The permutation distribution of U depends on the pooled midranks only,
    // so walking the C(n, n1) index subsets covers it completely.
    const double slack = 1e-12 * (1.0 + dist_obs);
    long long hits = 0, total = 0;
    std::vector<int> pick(n1);
    std::iota(pick.begin(), pick.end(), 0);
    while (true) {
      double rs = 0.0;
      for (int idx : pick) rs += rank[idx];
      const double us = rs - 0.5 * n1 * (n1 + 1);
      ++total;
      if (std::abs(us - mu) >= dist_obs - slack) ++hits;
      // next combination in lexicographic order
      int i = n1 - 1;
      while (i >= 0 && pick[i] == n - n1 + i) --i;
      if (i < 0) break;
      ++pick[i];
      for (int k = i + 1; k < n1; ++k) pick[k] = pick[k - 1] + 1;
    }
    res.p_value = static_cast<double>(hits) / static_cast<double>(total);
    res.method = "exact enumeration over all group assignments";
    return res;
  }

  // Tie-corrected variance with continuity correction.
  double tie_term = 0.0;
  {
    std::vector<double> sorted = pooled;
    std::sort(sorted.begin(), sorted.end());
    std::size_t i = 0;
    while (i < sorted.size()) {
      std::size_t j = i;
      while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      tie_term += t * t * t - t;
      i = j + 1;
    }
  }
  const double var = (static_cast<double>(n1) * n2 / 12.0) *
                     (n + 1 - tie_term / (static_cast<double>(n) * (n - 1)));
  if (var <= 0.0) {
    res.p_value = 1.0;
    res.method = "normal approximation degenerate (all values tied)";
    return res;
  }
  const double z = std::max(0.0, dist_obs - 0.5) / std::sqrt(var);
  res.p_value = std::min(1.0, 2.0 * (1.0 - normal_cdf(z)));
  res.method = "normal approximation, tie-corrected variance, continuity correction";
  return res;
}

TestResult shapiro_wilk(const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  if (n < 3 || n > 5000)
    throw std::invalid_argument("shapiro_wilk: n must be in [3, 5000]");
  std::vector<double> v = x;
  std::sort(v.begin(), v.end());
  if (v.front() == v.back())
    throw std::invalid_argument("shapiro_wilk: zero variance");

  // Blom scores and the Royston AS R94 weight corrections.
  std::vector<double> m(n);
  double ssq = 0.0;
  for (int i = 0; i < n; ++i) {
    m[i] = normal_quantile((i + 1 - 0.375) / (n + 0.25));
    ssq += m[i] * m[i];
  }
  std::vector<double> w(n);
  if (n == 3) {
    w[0] = -std::sqrt(0.5);
    w[1] = 0.0;
    w[2] = std::sqrt(0.5);
  } else {
    const double u = 1.0 / std::sqrt(static_cast<double>(n));
    const double c = std::sqrt(ssq);
    const double an = m[n - 1] / c +
                      u * (0.221157 +
                           u * (-0.147981 +
                                u * (-2.071190 + u * (4.434685 + u * -2.706056))));
    double phi;
    if (n > 5) {
      const double an1 = m[n - 2] / c +
                         u * (0.042981 +
                              u * (-0.293762 +
                                   u * (-1.752461 + u * (5.682633 + u * -3.582633))));
      phi = (ssq - 2.0 * m[n - 1] * m[n - 1] - 2.0 * m[n - 2] * m[n - 2]) /
            (1.0 - 2.0 * an * an - 2.0 * an1 * an1);
      w[n - 1] = an;
      w[n - 2] = an1;
      w[0] = -an;
      w[1] = -an1;
      for (int i = 2; i < n - 2; ++i) w[i] = m[i] / std::sqrt(phi);
    } else {
      phi = (ssq - 2.0 * m[n - 1] * m[n - 1]) / (1.0 - 2.0 * an * an);
      w[n - 1] = an;
      w[0] = -an;
      for (int i = 1; i < n - 1; ++i) w[i] = m[i] / std::sqrt(phi);
    }
  }

  double mean = 0.0;
  for (double t : v) mean += t;
  mean /= n;
  double num = 0.0, den = 0.0;
  for (int i = 0; i < n; ++i) {
    num += w[i] * v[i];
    den += (v[i] - mean) * (v[i] - mean);
  }
  double W = num * num / den;
  if (W > 1.0) W = 1.0;

  TestResult res;
  res.name = "shapiro_wilk";
  res.statistic = W;
  res.sidedness = "one-sided (departure from normality)";
  const double nd = static_cast<double>(n);
  if (n == 3) {
    const double p = (6.0 / M_PI) * (std::asin(std::sqrt(W)) - std::asin(std::sqrt(0.75)));
    res.p_value = std::min(1.0, std::max(0.0, p));
    res.method = "Royston AS R94, exact arcsine form for n=3";
    return res;
  }
  const double w1 = 1.0 - W;
  double y, mval, sval;
  if (n <= 11) {
    const double g = -2.273 + 0.459 * nd;
    if (std::log(w1) >= g) {
      res.p_value = 0.0;
      res.method = "Royston AS R94, small-sample transform saturated";
      return res;
    }
    y = -std::log(g - std::log(w1));
    mval = 0.5440 + nd * (-0.39978 + nd * (0.025054 + nd * -0.0006714));
    sval = std::exp(1.3822 + nd * (-0.77857 + nd * (0.062767 + nd * -0.0020322)));
    res.method = "Royston AS R94, small-sample transform (4 <= n <= 11)";
  } else {
    const double ln = std::log(nd);
    y = std::log(w1);
    mval = -1.5861 + ln * (-0.31082 + ln * (-0.083751 + ln * 0.0038915));
    sval = std::exp(-0.4803 + ln * (-0.082676 + ln * 0.0030302));
    res.method = "Royston AS R94, log-n transform (n >= 12)";
  }
  res.p_value = std::min(1.0, std::max(0.0, 1.0 - normal_cdf((y - mval) / sval)));
  return res;
}

TestResult paired_t(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("paired_t: equal lengths >= 2 required");
  const int n = static_cast<int>(a.size());
  std::vector<double> d(n);
  for (int i = 0; i < n; ++i) d[i] = a[i] - b[i];
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  if (ss == 0.0)
    throw std::invalid_argument("paired_t: zero variance in differences");
  const double sd = std::sqrt(ss / (n - 1));
  const double t = mean / (sd / std::sqrt(static_cast<double>(n)));

  TestResult res;
  res.name = "paired_t";
  res.statistic = t;
  res.p_value = student_t_two_sided(t, n - 1);
  res.sidedness = "two-sided";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "t distribution, df=%d, incomplete beta", n - 1);
  res.method = buf;
  return res;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw std::invalid_argument("normal_quantile: p must be in (0,1)");
  // Bisection bracket, then Newton polish; accuracy rests on erfc alone.
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (normal_cdf(mid) < p ? lo : hi) = mid;
  }
  double z = 0.5 * (lo + hi);
  for (int i = 0; i < 3; ++i) {
    const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
    if (pdf <= 0.0) break;
    z -= (normal_cdf(z) - p) / pdf;
  }
  return z;
}

double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double lbeta = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
  const double front = std::exp(lbeta + a * std::log(x) + b * std::log1p(-x));
  auto contfrac = [](double aa, double bb, double xx) {
    const double tiny = 1e-300, eps = 1e-15;
    double c = 1.0;
    double d = 1.0 - (aa + bb) * xx / (aa + 1.0);
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int it = 1; it <= 500; ++it) {
      const double m = static_cast<double>(it);
      double num = m * (bb - m) * xx / ((aa + 2.0 * m - 1.0) * (aa + 2.0 * m));
      d = 1.0 + num * d;
      if (std::abs(d) < tiny) d = tiny;
      c = 1.0 + num / c;
      if (std::abs(c) < tiny) c = tiny;
      d = 1.0 / d;
      h *= d * c;
      num = -(aa + m) * (aa + bb + m) * xx / ((aa + 2.0 * m) * (aa + 2.0 * m + 1.0));
      d = 1.0 + num * d;
      if (std::abs(d) < tiny) d = tiny;
      c = 1.0 + num / c;
      if (std::abs(c) < tiny) c = tiny;
      d = 1.0 / d;
      const double del = d * c;
      h *= del;
      if (std::abs(del - 1.0) < eps) break;
    }
    return h;
  };
  if (x < (a + 1.0) / (a + b + 2.0)) return front * contfrac(a, b, x) / a;
  return 1.0 - front * contfrac(b, a, 1.0 - x) / b;
}

double student_t_two_sided(double t, int df) {
  if (df < 1) throw std::invalid_argument("student_t_two_sided: df >= 1 required");
  const double x = df / (df + t * t);
  return std::min(1.0, std::max(0.0, incomplete_beta(0.5 * df, 0.5, x)));
}

}  // namespace rndiff
