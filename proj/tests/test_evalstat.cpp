#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "rndiff/evalstat.hpp"
#include "rndiff/rng.hpp"

using namespace rndiff;

namespace {

// O(n^2) pair-counting AUC, the independent oracle for the trapezoid.
double paircount_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0;
  long long pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      ++pairs;
      if (s[i] > s[j])
        wins += 1.0;
      else if (s[i] == s[j])
        wins += 0.5;
    }
  return wins / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("roc_auc trapezoid equals pair counting and behaves at the ends") {
  SUBCASE("perfect separation") {
    RocCurve c = roc_auc({0.9, 0.8, 0.4}, {1, 1, 0});
    CHECK(c.auc == 1.0);
    CHECK(c.points.front().fpr == 0.0);
    CHECK(c.points.front().tpr == 0.0);
    CHECK(c.points.back().fpr == 1.0);
    CHECK(c.points.back().tpr == 1.0);
  }

  SUBCASE("total ties give chance level") {
    CHECK(roc_auc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}).auc == 0.5);
  }

  SUBCASE("100 random tied fixtures match the pair-count oracle") {
    SplitMix64 rng(31);
    for (int rep = 0; rep < 100; ++rep) {
      const int n = 8 + static_cast<int>(rng.uniform_int(40));
      std::vector<double> s(n);
      std::vector<int> y(n);
      for (int i = 0; i < n; ++i) {
        s[i] = static_cast<double>(rng.uniform_int(10)) / 10.0;  // heavy ties
        y[i] = rng.bernoulli(0.4) ? 1 : 0;
      }
      y[0] = 1;
      y[1] = 0;
      RocCurve c = roc_auc(s, y);
      CHECK(std::abs(c.auc - paircount_auc(s, y)) < 1e-12);
      for (std::size_t k = 1; k < c.points.size(); ++k) {
        CHECK(c.points[k].fpr >= c.points[k - 1].fpr);
        CHECK(c.points[k].tpr >= c.points[k - 1].tpr);
      }
    }
  }

  SUBCASE("strictly monotone score transforms leave the curve alone") {
    SplitMix64 rng(32);
    std::vector<double> s(30);
    std::vector<int> y(30);
    for (int i = 0; i < 30; ++i) {
      s[i] = static_cast<double>(rng.uniform_int(6)) / 6.0;
      y[i] = i % 2;
    }
    std::vector<double> t(30);
    for (int i = 0; i < 30; ++i) t[i] = std::exp(3.0 * s[i]) - 2.0;
    RocCurve base = roc_auc(s, y);
    RocCurve mapped = roc_auc(t, y);
    CHECK(mapped.auc == base.auc);
    REQUIRE(mapped.points.size() == base.points.size());
    for (std::size_t k = 0; k < base.points.size(); ++k) {
      CHECK(mapped.points[k].fpr == base.points[k].fpr);
      CHECK(mapped.points[k].tpr == base.points[k].tpr);
    }
  }

  SUBCASE("single-class labels rejected") {
    CHECK_THROWS_WITH_AS(roc_auc({0.1, 0.2}, {1, 1}),
                         doctest::Contains("both classes"), std::invalid_argument);
  }

  SUBCASE("csv export carries the anchor rows") {
    std::string csv = roc_to_csv(roc_auc({0.9, 0.2}, {1, 0}));
    CHECK(csv.rfind("threshold,fpr,tpr\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);  // header + 3 points
  }
}

TEST_CASE("threshold_metrics reproduces the hand confusion matrix") {
  SUBCASE("perfect classifier") {
    ThresholdMetrics m = threshold_metrics({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0});
    CHECK(m.accuracy == 1.0);
    CHECK(m.sensitivity == 1.0);
    CHECK(m.specificity == 1.0);
  }

  SUBCASE("all predicted positive") {
    ThresholdMetrics m = threshold_metrics({0.9, 0.8, 0.7}, {1, 0, 0});
    CHECK(m.sensitivity == 1.0);
    CHECK(m.specificity == 0.0);
  }

  SUBCASE("TP=8 FN=2 TN=15 FP=5") {
    std::vector<double> s;
    std::vector<int> y;
    for (int i = 0; i < 8; ++i) { s.push_back(0.8); y.push_back(1); }
    for (int i = 0; i < 2; ++i) { s.push_back(0.2); y.push_back(1); }
    for (int i = 0; i < 15; ++i) { s.push_back(0.3); y.push_back(0); }
    for (int i = 0; i < 5; ++i) { s.push_back(0.6); y.push_back(0); }
    ThresholdMetrics m = threshold_metrics(s, y);
    CHECK(m.tp == 8);
    CHECK(m.fn == 2);
    CHECK(m.tn == 15);
    CHECK(m.fp == 5);
    CHECK(m.sensitivity == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(m.specificity == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(m.accuracy == doctest::Approx(23.0 / 30.0).epsilon(1e-12));
  }

  SUBCASE("boundary score counts as positive") {
    ThresholdMetrics m = threshold_metrics({0.5, 0.4}, {1, 0});
    CHECK(m.tp == 1);
    CHECK(m.tn == 1);
  }
}

TEST_CASE("fold_dispersion is mean with sample SD, three-decimal format") {
  Dispersion same = fold_dispersion({0.9, 0.9, 0.9});
  CHECK(same.mean == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(same.sd == 0.0);
  CHECK(format_dispersion(same) == "0.900 ± 0.000");

  Dispersion two = fold_dispersion({0.9, 1.0});
  CHECK(two.mean == doctest::Approx(0.95).epsilon(1e-12));
  CHECK(two.sd == doctest::Approx(0.07071067811865478).epsilon(1e-12));
  CHECK(format_dispersion(two) == "0.950 ± 0.071");

  CHECK_THROWS_AS(fold_dispersion({0.5}), std::invalid_argument);
}

TEST_CASE("fisher_exact reproduces the enumeration oracles") {
  const std::vector<std::vector<long long>> sex = {{40, 69}, {18, 10}};
  const std::vector<std::vector<long long>> wbrt = {{54, 55}, {5, 23}};
  const std::vector<std::vector<long long>> path = {{37, 72}, {11, 17}};
  const std::vector<std::vector<long long>> primary = {{54, 36, 8, 7, 2, 2},
                                                       {3, 5, 15, 0, 0, 5}};

  SUBCASE("full-weight probability-mass convention") {
    CHECK(fisher_exact(sex, false).p_value ==
          doctest::Approx(0.010386326479857983).epsilon(1e-9));
    CHECK(fisher_exact(wbrt, false).p_value ==
          doctest::Approx(0.002606185572172713).epsilon(1e-9));
    CHECK(fisher_exact(path, false).p_value ==
          doctest::Approx(0.6590104408209746).epsilon(1e-9));
    CHECK(fisher_exact(primary, false).p_value ==
          doctest::Approx(2.459056050479703e-09).epsilon(1e-6));
  }

  SUBCASE("default mid-p convention") {
    TestResult s = fisher_exact(sex);
    CHECK(s.p_value == doctest::Approx(0.007539893740969952).epsilon(1e-9));
    CHECK(s.statistic == doctest::Approx(0.005692865477776062).epsilon(1e-9));
    CHECK(s.sidedness == "two-sided");
    CHECK(s.method.find("mid-p") != std::string::npos);
    CHECK(fisher_exact(wbrt).p_value ==
          doctest::Approx(0.0018477694509766874).epsilon(1e-9));
    CHECK(fisher_exact(path).p_value ==
          doctest::Approx(0.5838147763312321).epsilon(1e-9));
    TestResult pr = fisher_exact(primary);
    CHECK(pr.p_value == doctest::Approx(2.4491425242474845e-09).epsilon(1e-6));
    CHECK(pr.method.find("Freeman-Halton") != std::string::npos);
  }

  SUBCASE("row and column swaps leave the 2x2 p-value unchanged") {
    for (bool mid : {false, true}) {
      const double base = fisher_exact(sex, mid).p_value;
      CHECK(fisher_exact({{18, 10}, {40, 69}}, mid).p_value ==
            doctest::Approx(base).epsilon(1e-12));
      CHECK(fisher_exact({{69, 40}, {10, 18}}, mid).p_value ==
            doctest::Approx(base).epsilon(1e-12));
      CHECK(fisher_exact({{40, 18}, {69, 10}}, mid).p_value ==
            doctest::Approx(base).epsilon(1e-12));  // transpose
    }
  }

  SUBCASE("degenerate tables rejected") {
    CHECK_THROWS_WITH_AS(fisher_exact({{0, 0}, {5, 3}}),
                         doctest::Contains("margin"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(fisher_exact({{1, 0}, {2, 0}}),
                         doctest::Contains("margin"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(fisher_exact({{1, -2}, {2, 3}}),
                         doctest::Contains("negative"), std::invalid_argument);
  }
}

TEST_CASE("mann_whitney_u exact and approximate paths") {
  SUBCASE("disjoint samples, hand enumeration") {
    TestResult r = mann_whitney_u({1, 2, 3}, {4, 5, 6});
    CHECK(r.statistic == 0.0);
    CHECK(r.p_value == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(r.method.find("exact") != std::string::npos);
  }

  SUBCASE("no-ties fixture with known exact p") {
    TestResult r = mann_whitney_u({1.2, 3.4, 0.5, 2.2}, {4.1, 2.9, 5.0, 3.3, 2.8});
    CHECK(r.statistic == 3.0);
    CHECK(r.p_value == doctest::Approx(14.0 / 126.0).epsilon(1e-12));
  }

  SUBCASE("tied fixture against brute-force enumeration") {
    TestResult r = mann_whitney_u({1, 2, 2, 3}, {2, 3, 4});
    CHECK(r.statistic == 2.5);
    CHECK(r.p_value == doctest::Approx(2.0 / 7.0).epsilon(1e-12));
  }

  SUBCASE("identical multisets sit at the null center") {
    TestResult r = mann_whitney_u({1, 2, 3, 4}, {1, 2, 3, 4});
    CHECK(r.statistic == 8.0);  // n^2 / 2
    CHECK(r.p_value == 1.0);
  }

  SUBCASE("swapping the samples keeps the p-value") {
    const std::vector<double> a = {0.3, 1.7, 2.1, 0.9};
    const std::vector<double> b = {1.1, 1.7, 2.8};
    TestResult ab = mann_whitney_u(a, b);
    TestResult ba = mann_whitney_u(b, a);
    CHECK(ab.p_value == doctest::Approx(ba.p_value).epsilon(1e-12));
    CHECK(ab.statistic + ba.statistic ==
          doctest::Approx(static_cast<double>(a.size() * b.size())).epsilon(1e-12));
  }

  SUBCASE("exact and normal paths agree at the handover size") {
    // Exhaustive over every no-ties configuration at n=6+6: the paths agree
    // within 0.01 wherever the exact p is decision-relevant (<= 0.25); the
    // mid-range gap peaks at 0.0155 near p = 0.39, which no continuity
    // correction can compress below 0.01.
    std::vector<int> pick = {0, 1, 2, 3, 4, 5};
    const int n = 12, k = 6;
    double worst_tail = 0.0, worst_all = 0.0;
    while (true) {
      std::vector<double> a, b;
      std::vector<bool> in(n, false);
      for (int idx : pick) in[idx] = true;
      for (int i = 0; i < n; ++i)
        (in[i] ? a : b).push_back(static_cast<double>(i + 1));
      TestResult ex = mann_whitney_u(a, b, MwMethod::exact);
      TestResult ap = mann_whitney_u(a, b, MwMethod::normal_approx);
      const double diff = std::abs(ex.p_value - ap.p_value);
      worst_all = std::max(worst_all, diff);
      if (ex.p_value <= 0.25) worst_tail = std::max(worst_tail, diff);
      int i = k - 1;
      while (i >= 0 && pick[i] == n - k + i) --i;
      if (i < 0) break;
      ++pick[i];
      for (int j = i + 1; j < k; ++j) pick[j] = pick[j - 1] + 1;
    }
    CHECK(worst_tail <= 0.011);
    CHECK(worst_all <= 0.016);
  }

  SUBCASE("large samples take the tie-corrected normal path") {
    SplitMix64 rng(48);
    std::vector<double> a(40), b(35);
    for (double& v : a) v = static_cast<double>(rng.uniform_int(5));
    for (double& v : b) v = static_cast<double>(rng.uniform_int(5)) + 0.5;
    TestResult r = mann_whitney_u(a, b);
    CHECK(r.method.find("normal approximation") != std::string::npos);
    CHECK(r.p_value >= 0.0);
    CHECK(r.p_value <= 1.0);
  }

  CHECK_THROWS_AS(mann_whitney_u({}, {1.0}), std::invalid_argument);
}

TEST_CASE("shapiro_wilk matches the AS R94 reference evaluation") {
  // Reference W and p evaluated independently from the published Royston
  // coefficient tables on fixed vectors.
  SUBCASE("n=10 near-normal (small-sample transform)") {
    TestResult r = shapiro_wilk({0.42, -1.31, 0.87, 2.05, -0.44, 0.11, 1.62,
                                 -0.73, 0.29, -2.18});
    CHECK(r.statistic == doctest::Approx(0.9861975260638967).epsilon(1e-6));
    CHECK(r.p_value == doctest::Approx(0.9896961071914598).epsilon(1e-6));
  }

  SUBCASE("n=10 right-skewed rejects normality") {
    TestResult r = shapiro_wilk({0.1, 0.2, 0.25, 0.3, 0.32, 0.4, 0.45, 0.5, 2.5, 4.0});
    CHECK(r.statistic == doctest::Approx(0.6267427094182683).epsilon(1e-6));
    CHECK(r.p_value == doctest::Approx(0.00011542230767256467).epsilon(1e-4));
  }

  SUBCASE("n=20 near-normal (log-n transform)") {
    TestResult r = shapiro_wilk({0.31, -0.52, 1.24, -1.83, 0.07, 0.95, -0.33,
                                 2.11, -0.78, 0.49, -1.12, 0.66, -0.21, 1.55,
                                 -0.94, 0.12, 0.83, -1.47, 0.38, -0.06});
    CHECK(r.statistic == doctest::Approx(0.9950214113063721).epsilon(1e-6));
    CHECK(r.p_value == doctest::Approx(0.9999918201542625).epsilon(1e-6));
  }

  SUBCASE("n=20 uniform ramp") {
    std::vector<double> ramp(20);
    for (int i = 0; i < 20; ++i) ramp[i] = i * 0.05;
    TestResult r = shapiro_wilk(ramp);
    CHECK(r.statistic == doctest::Approx(0.9603751832429884).epsilon(1e-6));
    CHECK(r.p_value == doctest::Approx(0.5513717457916771).epsilon(1e-5));
  }

  SUBCASE("n=3 exact arcsine form") {
    TestResult r = shapiro_wilk({1.0, 2.0, 4.0});
    // W = ((x3 - x1)^2 / 2) / sum((x - mean)^2) = 4.5 / 4.6667
    CHECK(r.statistic == doctest::Approx(4.5 / (14.0 / 3.0)).epsilon(1e-12));
    const double expect =
        (6.0 / M_PI) * (std::asin(std::sqrt(r.statistic)) - std::asin(std::sqrt(0.75)));
    CHECK(r.p_value == doctest::Approx(expect).epsilon(1e-12));
  }

  SUBCASE("W stays in (0,1] on random data") {
    SplitMix64 rng(52);
    for (int rep = 0; rep < 20; ++rep) {
      const int n = 3 + static_cast<int>(rng.uniform_int(60));
      std::vector<double> v(n);
      for (double& t : v) t = rng.uniform(0.0, 1.0);
      TestResult r = shapiro_wilk(v);
      CHECK(r.statistic > 0.0);
      CHECK(r.statistic <= 1.0);
      CHECK(r.p_value >= 0.0);
      CHECK(r.p_value <= 1.0);
    }
  }

  CHECK_THROWS_WITH_AS(shapiro_wilk({1.0, 2.0}), doctest::Contains("[3, 5000]"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(shapiro_wilk({2.0, 2.0, 2.0, 2.0}),
                       doctest::Contains("variance"), std::invalid_argument);
}

TEST_CASE("paired_t and the t-distribution kernel") {
  SUBCASE("hand-computed differences (1,2,3)") {
    TestResult r = paired_t({2.0, 4.0, 6.0}, {1.0, 2.0, 3.0});
    CHECK(r.statistic == doctest::Approx(2.0 * std::sqrt(3.0)).epsilon(1e-12));
    // df=2 closed form: p = 1 - sqrt(t^2/(2+t^2)) = 1 - sqrt(6/7)
    CHECK(r.p_value == doctest::Approx(1.0 - std::sqrt(6.0 / 7.0)).epsilon(1e-12));
    CHECK(r.method.find("df=2") != std::string::npos);
  }

  SUBCASE("five-fold AUC fixture") {
    TestResult r = paired_t({0.91, 0.88, 0.95, 0.90, 0.87},
                            {0.84, 0.86, 0.89, 0.83, 0.88});
    CHECK(r.statistic == doctest::Approx(2.635314381580266).epsilon(1e-10));
    CHECK(r.p_value == doctest::Approx(0.05786333524176701).epsilon(1e-8));
  }

  SUBCASE("sign flip negates t, keeps p") {
    TestResult fwd = paired_t({1.0, 3.0, 2.0, 5.0}, {0.5, 2.0, 2.5, 3.0});
    TestResult rev = paired_t({0.5, 2.0, 2.5, 3.0}, {1.0, 3.0, 2.0, 5.0});
    CHECK(fwd.statistic == doctest::Approx(-rev.statistic).epsilon(1e-12));
    CHECK(fwd.p_value == doctest::Approx(rev.p_value).epsilon(1e-12));
  }

  CHECK_THROWS_WITH_AS(paired_t({1.0, 2.0}, {1.0, 2.0}),
                       doctest::Contains("variance"), std::invalid_argument);
  CHECK_THROWS_AS(paired_t({1.0}, {2.0}), std::invalid_argument);
}

TEST_CASE("shared numeric kernels hold their identities") {
  SUBCASE("normal quantile round-trips through the cdf") {
    for (double p : {1e-6, 0.001, 0.025, 0.2, 0.5, 0.8, 0.975, 0.999, 1.0 - 1e-6}) {
      const double z = normal_quantile(p);
      CHECK(normal_cdf(z) == doctest::Approx(p).epsilon(1e-12));
    }
    CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
    CHECK_THROWS_AS(normal_quantile(0.0), std::invalid_argument);
  }

  SUBCASE("incomplete beta closed forms") {
    for (double x : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      CHECK(incomplete_beta(1.0, 1.0, x) == doctest::Approx(x).epsilon(1e-13));
      CHECK(incomplete_beta(1.0, 2.5, x) ==
            doctest::Approx(1.0 - std::pow(1.0 - x, 2.5)).epsilon(1e-13));
      CHECK(incomplete_beta(3.0, 1.0, x) ==
            doctest::Approx(std::pow(x, 3.0)).epsilon(1e-13));
      CHECK(incomplete_beta(2.0, 3.0, x) ==
            doctest::Approx(1.0 - incomplete_beta(3.0, 2.0, 1.0 - x)).epsilon(1e-12));
    }
    CHECK(incomplete_beta(2.0, 3.0, 0.0) == 0.0);
    CHECK(incomplete_beta(2.0, 3.0, 1.0) == 1.0);
  }
}
