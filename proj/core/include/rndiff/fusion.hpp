#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rndiff/featselect.hpp"
#include "rndiff/preprocess.hpp"
#include "rndiff/rng.hpp"
#include "rndiff/tensor.hpp"
#include "rndiff/vit.hpp"

namespace rndiff {

/// Meta-classifier training table: one row per labeled pool sample, columns
/// = the out-of-fold imaging probability (raw, it already lives in [0,1])
/// followed by the selection survivors standardized with the recorded pool
/// statistics. The baseline arms reuse the same shape without the imaging
/// column.
struct StackedDataset {
  std::vector<std::string> ids;
  std::vector<std::string> columns;
  std::vector<double> values;  // row-major
  std::vector<int> labels;
  std::vector<int> fold;  // fold whose held-out model produced the oof value

  int rows() const { return static_cast<int>(ids.size()); }
  int cols() const { return static_cast<int>(columns.size()); }
  double at(int r, int c) const {
    return values[static_cast<std::size_t>(r) * columns.size() + c];
  }
};

inline constexpr const char* kOofColumn = "oof_probability";

StackedDataset build_stack(const std::vector<double>& oof,
                           const std::vector<int>& labels,
                           const std::vector<int>& fold_assignment,
                           const FeatureTable& features,
                           const SelectionReport& selection);

/// Same schema minus the imaging column, for the clinical-only and
/// radiomics+clinical baselines.
StackedDataset build_feature_stack(const std::vector<int>& labels,
                                   const std::vector<int>& fold_assignment,
                                   const FeatureTable& features,
                                   const SelectionReport& selection);

std::string stack_to_csv(const StackedDataset& stack);

struct MetaConfig {
  int hidden1 = 32;
  int hidden2 = 16;
  double dropout = 0.1;
  int epochs = 200;
  double lr = 1e-2;
  double weight_decay = 0.0;
};

/// in -> hidden1 -> hidden2 -> 1 with GELU and dropout after each hidden
/// layer; the single output unit is a logit, sigmoid gives the probability.
struct MetaModel {
  int input_dim = 0;
  int hidden1 = 0;
  int hidden2 = 0;
  double dropout = 0.0;
  Tensor w1, b1, w2, b2, w3, b3;

  std::vector<Tensor> parameters() const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
};

MetaModel init_meta_model(int input_dim, const MetaConfig& cfg, SplitMix64& rng);

/// Forward pass on an (n, input_dim) batch; returns (n, 1) logits. Training
/// mode applies dropout and then requires an rng.
Tensor meta_logits(const MetaModel& m, const Tensor& x, bool training = false,
                   SplitMix64* dropout_rng = nullptr);

std::vector<double> meta_predict(const MetaModel& m, const StackedDataset& stack);
double meta_logit_row(const MetaModel& m, const std::vector<double>& row);
double meta_predict_row(const MetaModel& m, const std::vector<double>& row);

struct MetaTrainResult {
  MetaModel model;
  std::vector<double> loss;  // full-batch BCE per epoch
};

MetaTrainResult train_meta(const StackedDataset& stack, const MetaConfig& cfg,
                           std::uint64_t seed);

void save_meta_checkpoint(const std::string& stem, const MetaModel& m,
                          std::uint64_t master_seed = 0);
MetaModel load_meta_checkpoint(const std::string& stem);

/// Test-time imaging feature: mean necrosis probability over the fold models.
double imaging_probability(const std::vector<ViTParams>& fold_models,
                           const ChannelStack& input);

/// Assembles one meta input row for a sample outside the training stack:
/// optional imaging probability first, then the selection survivors pulled
/// from `features` row `row` and standardized with the recorded pool stats.
std::vector<double> stack_row(const FeatureTable& features, int row,
                              const SelectionReport& selection,
                              const double* imaging_prob = nullptr);

double predict_multimodal(const MetaModel& meta,
                          const std::vector<ViTParams>& fold_models,
                          const ChannelStack& input,
                          const FeatureTable& features, int row,
                          const SelectionReport& selection);

}  // namespace rndiff
