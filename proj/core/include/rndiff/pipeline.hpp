#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rndiff/evalstat.hpp"
#include "rndiff/featselect.hpp"
#include "rndiff/fusion.hpp"
#include "rndiff/phantom.hpp"
#include "rndiff/train.hpp"

namespace rndiff {

/// Experiment arms, in canonical execution order. The two ssl arms export
/// attention heatmaps; multimodal stacks the ssl_vit out-of-fold
/// probabilities onto the selected tabular features.
const std::vector<std::string>& arm_names();
bool is_known_arm(const std::string& name);

/// Everything one experiment needs, assembled from defaults overlaid with a
/// JSON config file. `seed` is the master run seed; every stochastic stage
/// draws from a stream derived from it, so one config + one seed fixes the
/// whole output tree. phantom.seed identifies the cohort and is deliberately
/// separate from the run seed.
struct RunConfig {
  std::uint64_t seed = 20260817;
  std::string cohort_dir = "cohort";
  std::string out_dir = "out";
  std::vector<std::string> arms;  // default: all six
  int folds = 5;
  double test_fraction = 0.2;
  int glcm_bins = 32;
  double target_spacing_mm = 1.0;
  PhantomSpec phantom;
  ViTConfig vit;  // two-channel; the t1ce arm derives its 1-channel twin
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  SelectionConfig selection;  // selection.seed is overwritten from `seed`
  MetaConfig meta;
};

RunConfig default_run_config();

/// Overlay of a JSON object onto the defaults. Unknown keys anywhere are
/// config errors, as are out-of-domain values (check_run_config is applied).
RunConfig run_config_from_json(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

/// Full effective config, every field explicit. Embedded in reports.
std::string run_config_to_json(const RunConfig& cfg);

/// Structural validation: nonempty known arm list, multimodal requires
/// ssl_vit (its stack consumes the out-of-fold probabilities), folds >= 2,
/// test_fraction in (0,1), and the nested module configs in range.
void check_run_config(const RunConfig& cfg);

/// Writes cohort_dir/unlabeled + cohort_dir/labeled in the raw cohort
/// format, with per-set provenance JSON. Rerun with the same config is
/// byte-identical.
void cmd_generate(const RunConfig& cfg);

struct ArmReport {
  std::string arm;
  bool ok = false;
  std::string error;  // failure record when !ok; other arms still run

  double test_auc = 0.0;
  double oof_auc = 0.0;
  ThresholdMetrics test_metrics;  // at threshold 0.5
  std::vector<double> fold_val_auc;
  Dispersion fold_auc_dispersion;  // across folds

  std::vector<std::string> test_ids;
  std::vector<double> test_probabilities;  // aligned with test_ids

  /// Attention arms only: rollout heatmap mass inside the lesion mask per
  /// test sample, aligned with test_ids, plus its mean.
  std::vector<double> mask_attention_fraction;
  double mean_mask_attention_fraction = 0.0;
};

struct EvalReport {
  std::string config_json;  // effective config, verbatim
  std::uint64_t seed = 0;
  FoldPlan plan;
  std::vector<std::string> test_ids;
  std::vector<ArmReport> arms;
  /// Paired t-tests on per-fold validation AUCs between every pair of
  /// completed arms; name = "paired_t(a,b)".
  std::vector<TestResult> paired_tests;

  bool any_failure() const;
  const ArmReport* find_arm(const std::string& name) const;
};

std::string eval_report_to_json(const EvalReport& report);

/// Runs the requested arms over a shared fold plan and writes the artifact
/// tree under cfg.out_dir: report.json, per-arm checkpoints, out-of-fold and
/// test-prediction CSVs, ROC curves, selection reports, attention NIfTIs for
/// the ssl arms, and run.log (the only file carrying timestamps). Generates
/// the cohort first when cohort_dir lacks one.
EvalReport cmd_run(const RunConfig& cfg);

struct ExplainResult {
  std::string sample_id;
  Volume3D heatmap;  // co-registered with the preprocessed crop, sums to 1
  double mask_fraction = 0.0;
  std::string nifti_path;
};

/// Attention rollout of one stored checkpoint on one cohort sample. The
/// checkpoint's embedded architecture decides the channel count and crop
/// side; the sample id is looked up in the labeled then unlabeled subsets.
ExplainResult cmd_explain(const RunConfig& cfg, const std::string& checkpoint_stem,
                          const std::string& sample_id);

/// Standalone calculator. Two-column CSV (group,value): Mann-Whitney U plus
/// Shapiro-Wilk per group (groups of fewer than 3 skip the normality test).
/// Three-column CSV (level,count_a,count_b): exact test on the 2xK table.
std::vector<TestResult> cmd_stats(const std::string& csv_path);

std::string test_result_to_line(const TestResult& r);

}  // namespace rndiff
