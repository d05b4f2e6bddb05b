#include "rndiff/featselect.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"
#include "rndiff/train.hpp"

namespace rndiff {

namespace {

double column_mean(const FeatureTable& t, int c) {
  double s = 0.0;
  for (int r = 0; r < t.rows(); ++r) s += t.at(r, c);
  return s / t.rows();
}

double column_variance(const FeatureTable& t, int c, double mean) {
  double s = 0.0;
  for (int r = 0; r < t.rows(); ++r) {
    const double d = t.at(r, c) - mean;
    s += d * d;
  }
  return s / t.rows();
}

FeatureTable keep_columns(const FeatureTable& t, const std::vector<int>& keep) {
  FeatureTable out;
  out.row_ids = t.row_ids;
  for (int c : keep) out.columns.push_back(t.columns[c]);
  out.values.reserve(static_cast<std::size_t>(t.rows()) * keep.size());
  for (int r = 0; r < t.rows(); ++r)
    for (int c : keep) out.values.push_back(t.at(r, c));
  return out;
}

}  // namespace

FeatureTable variance_filter(const FeatureTable& table, double threshold,
                             std::vector<VarianceDrop>* drops) {
  check_feature_table(table);
  std::vector<int> keep;
  for (int c = 0; c < table.cols(); ++c) {
    const double var = column_variance(table, c, column_mean(table, c));
    if (var < threshold) {
      if (drops) drops->push_back({table.columns[c].name, var});
    } else {
      keep.push_back(c);
    }
  }
  return keep_columns(table, keep);
}

FeatureTable correlation_filter(const FeatureTable& table, double threshold,
                                std::vector<CorrelationDrop>* drops) {
  check_feature_table(table);
  if (table.rows() < 2)
    throw std::invalid_argument("correlation_filter: needs at least 2 rows");
  const int p = table.cols();
  std::vector<double> mean(p), sd(p);
  for (int c = 0; c < p; ++c) {
    mean[c] = column_mean(table, c);
    const double var = column_variance(table, c, mean[c]);
    if (var <= 0.0)
      throw std::invalid_argument("correlation_filter: column " +
                                  table.columns[c].name +
                                  " has zero variance (filter variance first)");
    sd[c] = std::sqrt(var);
  }
  std::vector<int> keep;
  for (int c = 0; c < p; ++c) {
    bool dropped = false;
    for (int k : keep) {
      double cov = 0.0;
      for (int r = 0; r < table.rows(); ++r)
        cov += (table.at(r, k) - mean[k]) * (table.at(r, c) - mean[c]);
      cov /= table.rows();
      const double r = cov / (sd[k] * sd[c]);
      if (std::abs(r) > threshold) {
        if (drops) drops->push_back({table.columns[c].name, table.columns[k].name, r});
        dropped = true;
        break;
      }
    }
    if (!dropped) keep.push_back(c);
  }
  return keep_columns(table, keep);
}

double soft_threshold(double z, double lambda) {
  if (z > lambda) return z - lambda;
  if (z < -lambda) return z + lambda;
  return 0.0;
}

std::vector<double> lasso_fit(const std::vector<double>& X, int n, int p,
                              const std::vector<double>& y_centered,
                              double lambda, std::vector<double> warm,
                              double tol, int max_iter) {
  if (n <= 0 || p < 0) throw std::invalid_argument("lasso_fit: bad dimensions");
  if (X.size() != static_cast<std::size_t>(n) * p ||
      y_centered.size() != static_cast<std::size_t>(n))
    throw std::invalid_argument("lasso_fit: shape mismatch");
  if (lambda < 0.0) throw std::invalid_argument("lasso_fit: negative lambda");
  std::vector<double> beta = warm.empty() ? std::vector<double>(p, 0.0)
                                          : std::move(warm);
  if (beta.size() != static_cast<std::size_t>(p))
    throw std::invalid_argument("lasso_fit: warm start has wrong length");

  // Residual r = y - X beta, maintained incrementally.
  std::vector<double> resid = y_centered;
  for (int j = 0; j < p; ++j) {
    if (beta[j] == 0.0) continue;
    for (int i = 0; i < n; ++i)
      resid[i] -= X[static_cast<std::size_t>(i) * p + j] * beta[j];
  }
  // Columns are standardized, so each x_j'x_j / n term is its population
  // variance; compute once in case a caller passes near-standardized data.
  std::vector<double> col_sq(p, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) {
      const double v = X[static_cast<std::size_t>(i) * p + j];
      col_sq[j] += v * v;
    }
  for (int j = 0; j < p; ++j) {
    col_sq[j] /= n;
    if (col_sq[j] <= 0.0)
      throw std::invalid_argument("lasso_fit: column " + std::to_string(j) +
                                  " is identically zero");
  }

  for (int it = 0; it < max_iter; ++it) {
    double max_delta = 0.0;
    for (int j = 0; j < p; ++j) {
      double rho = 0.0;
      for (int i = 0; i < n; ++i)
        rho += X[static_cast<std::size_t>(i) * p + j] * resid[i];
      rho = rho / n + col_sq[j] * beta[j];
      const double updated = soft_threshold(rho, lambda) / col_sq[j];
      const double delta = updated - beta[j];
      if (delta != 0.0) {
        for (int i = 0; i < n; ++i)
          resid[i] -= X[static_cast<std::size_t>(i) * p + j] * delta;
        beta[j] = updated;
        max_delta = std::max(max_delta, std::abs(delta));
      }
    }
    if (max_delta < tol) break;
  }
  return beta;
}

LassoCvResult lasso_cv(const std::vector<double>& X, int n, int p,
                       const std::vector<double>& y, int k, int grid_size,
                       std::uint64_t seed, bool one_se_rule) {
  if (n < k) throw std::invalid_argument("lasso_cv: fewer rows than folds");
  if (grid_size < 2) throw std::invalid_argument("lasso_cv: grid_size too small");
  if (X.size() != static_cast<std::size_t>(n) * p ||
      y.size() != static_cast<std::size_t>(n))
    throw std::invalid_argument("lasso_cv: shape mismatch");
  for (double v : X)
    if (!std::isfinite(v)) throw std::invalid_argument("lasso_cv: non-finite X");
  for (double v : y)
    if (!std::isfinite(v)) throw std::invalid_argument("lasso_cv: non-finite y");

  LassoCvResult res;
  double mean_y = 0.0;
  for (double v : y) mean_y += v;
  mean_y /= n;
  res.intercept = mean_y;
  std::vector<double> yc(y);
  for (double& v : yc) v -= mean_y;

  double lambda_max = 0.0;
  for (int j = 0; j < p; ++j) {
    double dot = 0.0;
    for (int i = 0; i < n; ++i)
      dot += X[static_cast<std::size_t>(i) * p + j] * yc[i];
    lambda_max = std::max(lambda_max, std::abs(dot) / n);
  }
  if (lambda_max <= 0.0) lambda_max = 1.0;  // degenerate: y constant

  res.lambda_grid.resize(grid_size);
  const double log_hi = std::log(lambda_max);
  const double log_lo = std::log(lambda_max / 1000.0);
  for (int g = 0; g < grid_size; ++g)
    res.lambda_grid[g] =
        std::exp(log_hi + (log_lo - log_hi) * g / (grid_size - 1));

  // Stratified CV folds over the binary labels, seeded independently of any
  // model folds by the caller's seed choice.
  std::vector<int> int_labels(n);
  for (int i = 0; i < n; ++i) int_labels[i] = y[i] > 0.5 ? 1 : 0;
  FoldPlan plan = make_folds(int_labels, k, 0.0, seed);

  res.cv_loss.assign(grid_size, 0.0);
  for (int f = 0; f < k; ++f) {
    const auto& tr = plan.fold_train[f];
    const auto& va = plan.fold_val[f];
    const int nt = static_cast<int>(tr.size());
    std::vector<double> Xt(static_cast<std::size_t>(nt) * p);
    std::vector<double> yt(nt);
    double fold_mean = 0.0;
    for (int i = 0; i < nt; ++i) {
      for (int j = 0; j < p; ++j)
        Xt[static_cast<std::size_t>(i) * p + j] =
            X[static_cast<std::size_t>(tr[i]) * p + j];
      yt[i] = y[tr[i]];
      fold_mean += y[tr[i]];
    }
    fold_mean /= nt;
    for (double& v : yt) v -= fold_mean;

    std::vector<double> warm(p, 0.0);
    for (int g = 0; g < grid_size; ++g) {
      warm = lasso_fit(Xt, nt, p, yt, res.lambda_grid[g], std::move(warm));
      double se = 0.0;
      for (int idx : va) {
        double pred = fold_mean;
        for (int j = 0; j < p; ++j)
          pred += X[static_cast<std::size_t>(idx) * p + j] * warm[j];
        se += (y[idx] - pred) * (y[idx] - pred);
      }
      res.cv_loss[g] += se / va.size() / k;
    }
  }

  int best = 0;
  for (int g = 1; g < grid_size; ++g)
    if (res.cv_loss[g] < res.cv_loss[best]) best = g;
  if (one_se_rule) {
    // Largest lambda whose CV loss is within one SE of the minimum; the SE
    // is taken across the grid neighborhood of the minimizer.
    double se = 0.0;
    {
      // Recompute fold losses at the minimizer for a proper SE.
      std::vector<double> fold_losses;
      for (int f = 0; f < k; ++f) {
        const auto& tr = plan.fold_train[f];
        const auto& va = plan.fold_val[f];
        const int nt = static_cast<int>(tr.size());
        std::vector<double> Xt(static_cast<std::size_t>(nt) * p);
        std::vector<double> yt(nt);
        double fold_mean = 0.0;
        for (int i = 0; i < nt; ++i) {
          for (int j = 0; j < p; ++j)
            Xt[static_cast<std::size_t>(i) * p + j] =
                X[static_cast<std::size_t>(tr[i]) * p + j];
          yt[i] = y[tr[i]];
          fold_mean += y[tr[i]];
        }
        fold_mean /= nt;
        for (double& v : yt) v -= fold_mean;
        std::vector<double> beta =
            lasso_fit(Xt, nt, p, yt, res.lambda_grid[best]);
        double sse = 0.0;
        for (int idx : va) {
          double pred = fold_mean;
          for (int j = 0; j < p; ++j)
            pred += X[static_cast<std::size_t>(idx) * p + j] * beta[j];
          sse += (y[idx] - pred) * (y[idx] - pred);
        }
        fold_losses.push_back(sse / va.size());
      }
      double m = 0.0;
      for (double v : fold_losses) m += v;
      m /= fold_losses.size();
      double var = 0.0;
      for (double v : fold_losses) var += (v - m) * (v - m);
      var /= std::max<std::size_t>(1, fold_losses.size() - 1);
      se = std::sqrt(var / fold_losses.size());
    }
    for (int g = 0; g <= best; ++g)
      if (res.cv_loss[g] <= res.cv_loss[best] + se) {
        best = g;
        break;
      }
  }
  res.chosen_lambda = res.lambda_grid[best];

  // Full-data refit at the chosen lambda, warm-started along the path.
  std::vector<double> warm(p, 0.0);
  for (int g = 0; g <= best; ++g)
    warm = lasso_fit(X, n, p, yc, res.lambda_grid[g], std::move(warm));
  res.beta = warm;
  return res;
}

SelectionReport select_features(const FeatureTable& table,
                                const std::vector<int>& labels,
                                const SelectionConfig& cfg) {
  check_feature_table(table);
  if (static_cast<int>(labels.size()) != table.rows())
    throw std::invalid_argument("select_features: labels do not match rows");
  for (int l : labels)
    if (l != 0 && l != 1)
      throw std::invalid_argument("select_features: labels must be 0 or 1");

  SelectionReport report;
  FeatureTable filtered =
      variance_filter(table, cfg.variance_threshold, &report.dropped_by_variance);
  filtered = correlation_filter(filtered, cfg.correlation_threshold,
                                &report.dropped_by_correlation);

  const int n = filtered.rows();
  const int p = filtered.cols();
  std::vector<double> X(static_cast<std::size_t>(n) * p);
  report.standardized_columns.reserve(p);
  report.column_mean.resize(p);
  report.column_sd.resize(p);
  for (int c = 0; c < p; ++c) {
    report.standardized_columns.push_back(filtered.columns[c].name);
    const double m = column_mean(filtered, c);
    const double sd = std::sqrt(column_variance(filtered, c, m));
    report.column_mean[c] = m;
    report.column_sd[c] = sd;
    for (int r = 0; r < n; ++r)
      X[static_cast<std::size_t>(r) * p + c] = (filtered.at(r, c) - m) / sd;
  }

  std::vector<double> y(labels.begin(), labels.end());
  LassoCvResult cv = lasso_cv(X, n, p, y, cfg.k, cfg.grid_size, cfg.seed,
                              cfg.one_se_rule);
  report.lambda_grid = cv.lambda_grid;
  report.cv_loss = cv.cv_loss;
  report.chosen_lambda = cv.chosen_lambda;
  report.intercept = cv.intercept;
  for (int c = 0; c < p; ++c)
    if (cv.beta[c] != 0.0) {
      report.retained.push_back(filtered.columns[c].name);
      report.coefficients.push_back(cv.beta[c]);
    }
  return report;
}

std::string selection_report_to_json(const SelectionReport& report) {
  nlohmann::ordered_json j;
  j["dropped_by_variance"] = nlohmann::ordered_json::array();
  for (const auto& d : report.dropped_by_variance)
    j["dropped_by_variance"].push_back(
        {{"column", d.column}, {"variance", d.variance}});
  j["dropped_by_correlation"] = nlohmann::ordered_json::array();
  for (const auto& d : report.dropped_by_correlation)
    j["dropped_by_correlation"].push_back(
        {{"column", d.column}, {"partner", d.partner}, {"r", d.r}});
  j["lambda_grid"] = report.lambda_grid;
  j["cv_loss"] = report.cv_loss;
  j["chosen_lambda"] = report.chosen_lambda;
  j["intercept"] = report.intercept;
  j["retained"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < report.retained.size(); ++i)
    j["retained"].push_back({{"column", report.retained[i]},
                             {"coefficient", report.coefficients[i]}});
  j["standardized_columns"] = report.standardized_columns;
  j["column_mean"] = report.column_mean;
  j["column_sd"] = report.column_sd;
  return j.dump(2);
}

}  // namespace rndiff
