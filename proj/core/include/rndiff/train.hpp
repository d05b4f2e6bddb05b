#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "rndiff/vit.hpp"

namespace rndiff {

/// Context-restoration pretext: swaps the image-channel contents of
/// disjoint patch pairs; the mask channel is left intact. The log lists the
/// swapped patch-index pairs; re-applying it restores the input bit-exactly.
std::pair<ChannelStack, std::vector<std::pair<int, int>>> corrupt_context(
    const ChannelStack& input, int n_swaps, int patch_side, SplitMix64& rng);

ChannelStack apply_swaps(const ChannelStack& input,
                         const std::vector<std::pair<int, int>>& swap_log,
                         int patch_side);

/// Contrastive-view augmentation parameters. Geometric pieces (flips, a
/// quarter-turn rotation about one axis) touch every channel; the intensity
/// affine touches only the image channel, keeping the mask binary.
struct ViewTransform {
  std::array<bool, 3> flip{false, false, false};
  int rot_axis = 2;
  int rot_quarters = 0;
  double intensity_scale = 1.0;
  double intensity_shift = 0.0;
};

ViewTransform draw_view_transform(SplitMix64& rng);
ChannelStack apply_view_transform(const ChannelStack& input,
                                  const ViewTransform& t);

/// Two independently transformed views of the same sample; the drawn
/// transforms are reported through the optional out-parameters.
std::pair<ChannelStack, ChannelStack> augment_views(const ChannelStack& input,
                                                    SplitMix64& rng,
                                                    ViewTransform* ta = nullptr,
                                                    ViewTransform* tb = nullptr);

/// One optimizer step's worth of pretext work: corrupted inputs with their
/// restoration targets and swap logs, plus augmented view pairs (views 2k
/// and 2k+1 derive from sample k).
struct PretextBatch {
  std::vector<ChannelStack> corrupted;
  std::vector<ChannelStack> originals;
  std::vector<std::vector<std::pair<int, int>>> swap_logs;
  std::vector<ChannelStack> views;
  std::vector<ViewTransform> view_transforms;
};

PretextBatch make_pretext_batch(const std::vector<const ChannelStack*>& samples,
                                int n_swaps, int patch_side, SplitMix64& rng);

struct PretrainConfig {
  int epochs = 8;
  int batch_size = 8;
  double lr = 3e-4;
  double weight_decay = 0.0;
  double lambda_contrastive = 1.0;  // 0 skips the contrastive branch entirely
  double temperature = 0.5;
  int n_swaps = 4;
};

struct EpochLoss {
  int epoch = 0;  // 1-based
  double restoration = 0.0;
  double contrastive = 0.0;
  double total = 0.0;
};

struct PretrainResult {
  ViTParams params;
  std::vector<EpochLoss> log;
};

/// Joint restoration + contrastive pretraining. Aborts with diagnostics on a
/// non-finite loss. When log_csv is given, writes one
/// "epoch,restoration,contrastive,total" line per epoch.
PretrainResult pretrain(const std::vector<ChannelStack>& cohort,
                        const ViTConfig& vit_cfg, const PretrainConfig& cfg,
                        std::uint64_t seed, std::ostream* log_csv = nullptr);

/// Stratified split plan: held-out test indices plus k cross-validation
/// folds over the remaining pool. Per fold, validation is the fold itself
/// and training is the rest of the pool.
struct FoldPlan {
  int k = 5;
  std::uint64_t seed = 0;
  std::vector<int> test_indices;
  std::vector<int> pool_indices;
  std::vector<std::vector<int>> fold_train;
  std::vector<std::vector<int>> fold_val;
};

/// Test split drawn first (per-class largest-remainder quotas), then k
/// stratified folds on the pool; all lists sorted, membership seeded.
FoldPlan make_folds(const std::vector<int>& labels, int k, double test_fraction,
                    std::uint64_t seed);

struct FinetuneConfig {
  int epochs = 15;
  int batch_size = 8;
  double lr = 1e-4;
  double weight_decay = 0.0;
};

struct FinetuneResult {
  std::vector<ViTParams> fold_models;
  /// Out-of-fold necrosis probability per cohort index; NaN outside the pool.
  std::vector<double> oof;
  /// Fold whose model produced each prediction; -1 outside the pool.
  std::vector<int> oof_fold;
  std::vector<std::vector<double>> fold_loss;  // per fold, per epoch
};

/// Supervised fine-tuning of one model per fold. `init` = nullptr trains
/// from scratch; otherwise every fold starts from a copy of the checkpoint
/// (architecture must match). Labels: 0 progression, 1 necrosis.
FinetuneResult finetune(const ViTConfig& vit_cfg, const ViTParams* init,
                        const FoldPlan& plan,
                        const std::vector<ChannelStack>& inputs,
                        const std::vector<int>& labels,
                        const FinetuneConfig& cfg, std::uint64_t seed);

/// Necrosis probability (softmax over the two logits) per sample.
std::vector<double> predict_proba(const ViTParams& params,
                                  const std::vector<const ChannelStack*>& samples,
                                  int batch_size = 8);

}  // namespace rndiff
