#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rndiff/radiomics.hpp"

namespace rndiff {

struct VarianceDrop {
  std::string column;
  double variance = 0.0;
};

struct CorrelationDrop {
  std::string column;   // dropped (the later of the pair)
  std::string partner;  // surviving earlier column
  double r = 0.0;
};

/// Full record of the selection cascade: what was dropped and why, the
/// LASSO path diagnostics, and the refit coefficients of the survivors.
struct SelectionReport {
  std::vector<VarianceDrop> dropped_by_variance;
  std::vector<CorrelationDrop> dropped_by_correlation;
  std::vector<double> lambda_grid;
  std::vector<double> cv_loss;  // mean CV squared error per lambda
  double chosen_lambda = 0.0;
  double intercept = 0.0;
  std::vector<std::string> retained;     // nonzero at chosen lambda
  std::vector<double> coefficients;      // aligned with retained
  /// Columns that entered the LASSO (post filters) with the
  /// standardization statistics used, for applying the model downstream.
  std::vector<std::string> standardized_columns;
  std::vector<double> column_mean;
  std::vector<double> column_sd;
};

std::string selection_report_to_json(const SelectionReport& report);

/// Drops columns whose population variance (raw values) is below threshold.
FeatureTable variance_filter(const FeatureTable& table, double threshold,
                             std::vector<VarianceDrop>* drops = nullptr);

/// Greedy scan in column order: a column correlated beyond the threshold
/// (|Pearson r|) with any earlier survivor is dropped. Zero-variance
/// columns must have been filtered out first.
FeatureTable correlation_filter(const FeatureTable& table, double threshold,
                                std::vector<CorrelationDrop>* drops = nullptr);

double soft_threshold(double z, double lambda);

/// Coordinate-descent LASSO (squared loss, no intercept) on standardized
/// columns; `warm` seeds the solve and may be empty.
std::vector<double> lasso_fit(const std::vector<double>& X, int n, int p,
                              const std::vector<double>& y_centered,
                              double lambda, std::vector<double> warm = {},
                              double tol = 1e-12, int max_iter = 100000);

struct LassoCvResult {
  std::vector<double> lambda_grid;
  std::vector<double> cv_loss;
  double chosen_lambda = 0.0;
  double intercept = 0.0;       // mean of y (full data)
  std::vector<double> beta;     // full-data refit at chosen lambda
};

/// Warm-started path over a 50-point log grid from lambda_max down to
/// lambda_max/1000, scored by seeded stratified k-fold CV squared error.
LassoCvResult lasso_cv(const std::vector<double>& X, int n, int p,
                       const std::vector<double>& y, int k, int grid_size,
                       std::uint64_t seed, bool one_se_rule = false);

struct SelectionConfig {
  double variance_threshold = 0.01;
  double correlation_threshold = 0.9;
  int k = 5;
  int grid_size = 50;
  bool one_se_rule = false;
  std::uint64_t seed = 0;
};

/// The whole cascade on a feature table with binary labels.
SelectionReport select_features(const FeatureTable& table,
                                const std::vector<int>& labels,
                                const SelectionConfig& cfg);

}  // namespace rndiff
