#include "rndiff/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>

#include "json.hpp"
#include "rndiff/checkpoint.hpp"
#include "rndiff/cohort.hpp"
#include "rndiff/csv.hpp"
#include "rndiff/nifti.hpp"
#include "rndiff/preprocess.hpp"
#include "rndiff/radiomics.hpp"

namespace fs = std::filesystem;
using njson = nlohmann::ordered_json;

namespace rndiff {
namespace {

// Stream ids for deriving per-stage seeds from the master run seed. Values
// are arbitrary but frozen: changing any of them changes every artifact.
constexpr std::uint64_t kStreamFolds = 101;
constexpr std::uint64_t kStreamPretrainTwoCh = 102;
constexpr std::uint64_t kStreamPretrainOneCh = 103;
constexpr std::uint64_t kStreamFinetuneSsl = 104;
constexpr std::uint64_t kStreamFinetuneScratch = 105;
constexpr std::uint64_t kStreamFinetuneT1ce = 106;
constexpr std::uint64_t kStreamSelectionFull = 107;
constexpr std::uint64_t kStreamSelectionClinical = 108;
constexpr std::uint64_t kStreamMetaRadiomicsClinical = 109;
constexpr std::uint64_t kStreamMetaClinicalOnly = 110;
constexpr std::uint64_t kStreamMetaMultimodal = 111;

std::uint64_t stream_seed(std::uint64_t master, std::uint64_t stream) {
  return SplitMix64::derive(master, stream).next_u64();
}

// All wall-clock output is funneled through this logger, keeping every other
// artifact byte-stable across reruns.
class RunLog {
 public:
  explicit RunLog(const fs::path& path) : out_(path) {
    if (!out_) throw std::runtime_error("cannot open log file " + path.string());
  }

  void line(const std::string& msg) {
    char stamp[32];
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", &tm);
    out_ << '[' << stamp << "] " << msg << '\n';
    out_.flush();
    std::fprintf(stderr, "%s\n", msg.c_str());
  }

 private:
  std::ofstream out_;
};

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << content;
}

void require_keys(const nlohmann::json& obj, const std::string& where,
                  const std::vector<std::string>& allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw std::invalid_argument("config: unknown key \"" + it.key() + "\" in " +
                                  where);
}

template <class T>
void read_field(const nlohmann::json& obj, const char* key, const std::string& where,
                T& out) {
  if (!obj.contains(key)) return;
  try {
    obj.at(key).get_to(out);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config: bad value for " + where + "." + key + ": " +
                                e.what());
  }
}

const nlohmann::json* sub_object(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) return nullptr;
  if (!j.at(key).is_object())
    throw std::invalid_argument(std::string("config: \"") + key +
                                "\" must be an object");
  return &j.at(key);
}

std::vector<std::string> dedup_canonical(const std::vector<std::string>& arms) {
  std::vector<std::string> out;
  for (const std::string& name : arm_names())
    if (std::find(arms.begin(), arms.end(), name) != arms.end()) out.push_back(name);
  return out;
}

FeatureTable subset_rows(const FeatureTable& t, const std::vector<int>& rows) {
  FeatureTable out;
  out.columns = t.columns;
  for (int r : rows) {
    out.row_ids.push_back(t.row_ids[r]);
    for (int c = 0; c < t.cols(); ++c) out.values.push_back(t.at(r, c));
  }
  return out;
}

FeatureTable subset_columns(const FeatureTable& t, const std::string& provenance) {
  FeatureTable out;
  out.row_ids = t.row_ids;
  std::vector<int> keep;
  for (int c = 0; c < t.cols(); ++c)
    if (t.columns[c].provenance == provenance) {
      keep.push_back(c);
      out.columns.push_back(t.columns[c]);
    }
  for (int r = 0; r < t.rows(); ++r)
    for (int c : keep) out.values.push_back(t.at(r, c));
  return out;
}

StackedDataset stack_subset(const StackedDataset& s, const std::vector<int>& rows) {
  StackedDataset out;
  out.columns = s.columns;
  for (int r : rows) {
    out.ids.push_back(s.ids[r]);
    out.labels.push_back(s.labels[r]);
    out.fold.push_back(s.fold[r]);
    for (int c = 0; c < s.cols(); ++c) out.values.push_back(s.at(r, c));
  }
  return out;
}

// Everything cmd_run derives from the labeled cohort before any arm starts.
struct PreparedCohort {
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<ClinicalRecord> clinical;
  std::vector<CroppedSample> crops;
  std::vector<ChannelStack> two_ch;
  std::vector<ChannelStack> one_ch;  // filled only when the t1ce arm runs
};

PreparedCohort prepare_labeled(const RunConfig& cfg, bool need_one_ch, RunLog& log) {
  const std::string dir = cfg.cohort_dir + "/labeled";
  const std::vector<CohortEntry> index = read_cohort_index(dir);
  PreparedCohort out;
  PreprocessOptions opt;
  opt.target_spacing_mm = cfg.target_spacing_mm;
  opt.crop_side = cfg.vit.input_side;
  for (const CohortEntry& entry : index) {
    if (!entry.label)
      throw std::runtime_error("labeled cohort contains unlabeled row " + entry.id);
    LesionSample sample = load_sample(entry);
    CroppedSample crop = preprocess_sample(sample, opt);
    out.ids.push_back(entry.id);
    out.labels.push_back(static_cast<int>(*entry.label));
    out.clinical.push_back(entry.clinical);
    out.two_ch.push_back(assemble_channels(crop.image, crop.mask));
    if (need_one_ch) out.one_ch.push_back(assemble_channels(crop.image));
    out.crops.push_back(std::move(crop));
  }
  log.line("cohort: " + std::to_string(out.ids.size()) + " labeled samples from " + dir);
  return out;
}

struct UnlabeledStacks {
  std::vector<ChannelStack> two;
  std::vector<ChannelStack> one;
};

UnlabeledStacks load_unlabeled(const RunConfig& cfg, bool need_two, bool need_one,
                               RunLog& log) {
  const std::string dir = cfg.cohort_dir + "/unlabeled";
  const std::vector<CohortEntry> index = read_cohort_index(dir);
  UnlabeledStacks out;
  PreprocessOptions opt;
  opt.target_spacing_mm = cfg.target_spacing_mm;
  opt.crop_side = cfg.vit.input_side;
  for (const CohortEntry& entry : index) {
    LesionSample sample = load_sample(entry);
    CroppedSample crop = preprocess_sample(sample, opt);
    if (need_two) out.two.push_back(assemble_channels(crop.image, crop.mask));
    if (need_one) out.one.push_back(assemble_channels(crop.image));
  }
  log.line("cohort: " + std::to_string(index.size()) + " unlabeled samples from " + dir);
  return out;
}

std::string pool_predictions_csv(const std::vector<std::string>& ids,
                                 const std::vector<int>& labels,
                                 const std::vector<int>& fold,
                                 const std::vector<double>& pred) {
  std::string s = "id,label,fold,oof_probability\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    s += ids[i];
    s += ',' + std::to_string(labels[i]);
    s += ',' + std::to_string(fold[i]);
    s += ',' + format_g17(pred[i]);
    s += '\n';
  }
  return s;
}

std::string test_predictions_csv(const std::vector<std::string>& ids,
                                 const std::vector<int>& labels,
                                 const std::vector<double>& prob) {
  std::string s = "id,label,probability\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    s += ids[i];
    s += ',' + std::to_string(labels[i]);
    s += ',' + format_g17(prob[i]);
    s += '\n';
  }
  return s;
}

// Fills the metric section of an arm report from per-pool out-of-fold
// predictions and ensemble test probabilities.
ArmReport score_arm(const std::string& name, const FoldPlan& plan,
                    const std::vector<int>& labels, const std::vector<std::string>& ids,
                    const std::vector<int>& pool_fold,
                    const std::vector<double>& pool_pred,
                    const std::vector<double>& test_prob) {
  ArmReport rep;
  rep.arm = name;

  std::vector<int> pool_labels;
  for (int i : plan.pool_indices) pool_labels.push_back(labels[i]);
  rep.oof_auc = roc_auc(pool_pred, pool_labels).auc;

  for (int f = 0; f < plan.k; ++f) {
    std::vector<double> scores;
    std::vector<int> fl;
    for (std::size_t j = 0; j < pool_pred.size(); ++j)
      if (pool_fold[j] == f) {
        scores.push_back(pool_pred[j]);
        fl.push_back(pool_labels[j]);
      }
    rep.fold_val_auc.push_back(roc_auc(scores, fl).auc);
  }
  rep.fold_auc_dispersion = fold_dispersion(rep.fold_val_auc);

  std::vector<int> test_labels;
  for (int i : plan.test_indices) {
    test_labels.push_back(labels[i]);
    rep.test_ids.push_back(ids[i]);
  }
  rep.test_auc = roc_auc(test_prob, test_labels).auc;
  rep.test_metrics = threshold_metrics(test_prob, test_labels, 0.5);
  rep.test_probabilities = test_prob;
  rep.ok = true;
  return rep;
}

void write_arm_csvs(const fs::path& arm_dir, const FoldPlan& plan,
                    const std::vector<int>& labels, const std::vector<std::string>& ids,
                    const std::vector<int>& pool_fold,
                    const std::vector<double>& pool_pred, const ArmReport& rep) {
  std::vector<std::string> pool_ids;
  std::vector<int> pool_labels;
  for (int i : plan.pool_indices) {
    pool_ids.push_back(ids[i]);
    pool_labels.push_back(labels[i]);
  }
  write_text(arm_dir / "oof.csv",
             pool_predictions_csv(pool_ids, pool_labels, pool_fold, pool_pred));
  std::vector<int> test_labels;
  for (int i : plan.test_indices) test_labels.push_back(labels[i]);
  write_text(arm_dir / "test_predictions.csv",
             test_predictions_csv(rep.test_ids, test_labels, rep.test_probabilities));
  write_text(arm_dir / "roc_test.csv",
             roc_to_csv(roc_auc(rep.test_probabilities, test_labels)));
}

// Ensemble rollout heatmap (mean over fold models, still summing to 1) per
// test sample, written next to the other arm artifacts.
std::vector<double> export_attention(const fs::path& arm_dir, const ViTConfig& vcfg,
                                     const std::vector<ViTParams>& fold_models,
                                     const std::vector<ChannelStack>& stacks,
                                     const std::vector<CroppedSample>& crops,
                                     const FoldPlan& plan,
                                     const std::vector<std::string>& ids) {
  fs::create_directories(arm_dir / "attention");
  std::vector<double> fractions;
  for (int idx : plan.test_indices) {
    Volume3D mean_heat;
    for (std::size_t f = 0; f < fold_models.size(); ++f) {
      AttentionTrace trace;
      const Tensor patches = patchify_batch({&stacks[idx]}, vcfg);
      (void)vit_forward(fold_models[f], patches, false, nullptr, &trace);
      Volume3D heat = attention_rollout(trace, vcfg, crops[idx].image, 0);
      if (f == 0) {
        mean_heat = std::move(heat);
      } else {
        for (std::size_t v = 0; v < heat.voxels.size(); ++v)
          mean_heat.voxels[v] += heat.voxels[v];
      }
    }
    for (double& v : mean_heat.voxels) v /= static_cast<double>(fold_models.size());
    write_nifti(mean_heat, kNiftiFloat64,
                (arm_dir / "attention" / (ids[idx] + ".nii")).string());
    fractions.push_back(mask_attention_fraction(mean_heat, crops[idx].mask));
  }
  return fractions;
}

struct VitArmOutput {
  ArmReport report;
  FinetuneResult ft;
};

VitArmOutput run_vit_arm(const RunConfig& cfg, const std::string& name,
                         const ViTConfig& vcfg, const std::vector<ChannelStack>& stacks,
                         const PreparedCohort& cohort, const FoldPlan& plan,
                         const ViTParams* init, std::uint64_t ft_seed,
                         bool attention, RunLog& log) {
  const fs::path arm_dir = fs::path(cfg.out_dir) / name;
  fs::create_directories(arm_dir);

  VitArmOutput out;
  out.ft = finetune(vcfg, init, plan, stacks, cohort.labels, cfg.finetune, ft_seed);
  for (std::size_t f = 0; f < out.ft.fold_models.size(); ++f)
    save_vit_checkpoint(out.ft.fold_models[f],
                        (arm_dir / ("fold" + std::to_string(f))).string(), cfg.seed,
                        cfg.finetune.epochs);

  std::vector<const ChannelStack*> test_ptrs;
  for (int i : plan.test_indices) test_ptrs.push_back(&stacks[i]);
  std::vector<double> test_prob(test_ptrs.size(), 0.0);
  for (const ViTParams& m : out.ft.fold_models) {
    const std::vector<double> p = predict_proba(m, test_ptrs, cfg.finetune.batch_size);
    for (std::size_t j = 0; j < p.size(); ++j) test_prob[j] += p[j];
  }
  for (double& p : test_prob) p /= static_cast<double>(out.ft.fold_models.size());

  std::vector<int> pool_fold;
  std::vector<double> pool_pred;
  for (int i : plan.pool_indices) {
    pool_fold.push_back(out.ft.oof_fold[i]);
    pool_pred.push_back(out.ft.oof[i]);
  }

  out.report = score_arm(name, plan, cohort.labels, cohort.ids, pool_fold, pool_pred,
                         test_prob);
  write_arm_csvs(arm_dir, plan, cohort.labels, cohort.ids, pool_fold, pool_pred,
                 out.report);

  if (attention) {
    out.report.mask_attention_fraction = export_attention(
        arm_dir, vcfg, out.ft.fold_models, stacks, cohort.crops, plan, cohort.ids);
    double sum = 0.0;
    for (double v : out.report.mask_attention_fraction) sum += v;
    out.report.mean_mask_attention_fraction =
        sum / static_cast<double>(out.report.mask_attention_fraction.size());
  }

  log.line("arm " + name + ": test_auc=" + format_g17(out.report.test_auc) +
           " oof_auc=" + format_g17(out.report.oof_auc));
  return out;
}

ViTParams pretrain_for_arm(const RunConfig& cfg, const std::string& name,
                           const ViTConfig& vcfg,
                           const std::vector<ChannelStack>& unlabeled,
                           std::uint64_t seed, RunLog& log) {
  const fs::path arm_dir = fs::path(cfg.out_dir) / name;
  fs::create_directories(arm_dir);
  std::ofstream loss_log(arm_dir / "pretrain_log.csv", std::ios::binary);
  if (!loss_log) throw std::runtime_error("cannot write pretrain_log.csv for " + name);
  PretrainResult pre = pretrain(unlabeled, vcfg, cfg.pretrain, seed, &loss_log);
  save_vit_checkpoint(pre.params, (arm_dir / "pretrain").string(), cfg.seed,
                      cfg.pretrain.epochs);
  log.line("arm " + name + ": pretrained " + std::to_string(cfg.pretrain.epochs) +
           " epochs, final total loss " + format_g17(pre.log.back().total));
  return pre.params;
}

ArmReport run_meta_arm(const RunConfig& cfg, const std::string& name,
                       const StackedDataset& pool_stack, const FeatureTable& features,
                       const SelectionReport& sel, std::uint64_t arm_seed,
                       const FoldPlan& plan, const PreparedCohort& cohort,
                       const std::vector<double>* test_imaging, RunLog& log) {
  const fs::path arm_dir = fs::path(cfg.out_dir) / name;
  fs::create_directories(arm_dir);
  write_text(arm_dir / "selection.json", selection_report_to_json(sel));
  if (pool_stack.cols() < 1)
    throw std::runtime_error(
        "selection retained no features; nothing to stack for this arm");
  write_text(arm_dir / "stack.csv", stack_to_csv(pool_stack));

  std::vector<double> pool_pred(pool_stack.rows(), 0.0);
  std::vector<MetaModel> fold_metas;
  for (int f = 0; f < plan.k; ++f) {
    std::vector<int> train_rows;
    std::vector<int> val_rows;
    for (int r = 0; r < pool_stack.rows(); ++r)
      (pool_stack.fold[r] == f ? val_rows : train_rows).push_back(r);
    const StackedDataset sub = stack_subset(pool_stack, train_rows);
    MetaTrainResult res = train_meta(sub, cfg.meta, stream_seed(arm_seed, f));
    save_meta_checkpoint((arm_dir / ("meta_fold" + std::to_string(f))).string(),
                         res.model, cfg.seed);
    for (int r : val_rows) {
      std::vector<double> row(pool_stack.values.begin() +
                                  static_cast<std::size_t>(r) * pool_stack.cols(),
                              pool_stack.values.begin() +
                                  static_cast<std::size_t>(r + 1) * pool_stack.cols());
      pool_pred[r] = meta_predict_row(res.model, row);
    }
    fold_metas.push_back(std::move(res.model));
  }

  std::vector<double> test_prob;
  for (std::size_t j = 0; j < plan.test_indices.size(); ++j) {
    const int idx = plan.test_indices[j];
    const double* imaging = test_imaging ? &(*test_imaging)[j] : nullptr;
    const std::vector<double> row = stack_row(features, idx, sel, imaging);
    double p = 0.0;
    for (const MetaModel& m : fold_metas) p += meta_predict_row(m, row);
    test_prob.push_back(p / static_cast<double>(fold_metas.size()));
  }

  ArmReport rep = score_arm(name, plan, cohort.labels, cohort.ids, pool_stack.fold,
                            pool_pred, test_prob);
  write_arm_csvs(arm_dir, plan, cohort.labels, cohort.ids, pool_stack.fold, pool_pred,
                 rep);
  log.line("arm " + name + ": test_auc=" + format_g17(rep.test_auc) +
           " oof_auc=" + format_g17(rep.oof_auc));
  return rep;
}

double parse_strict_double(const std::string& s) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || !std::isfinite(v))
    throw std::invalid_argument("stats: not a finite number: \"" + s + "\"");
  return v;
}

long long parse_strict_count(const std::string& s) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const long long v = std::strtoll(begin, &end, 10);
  if (end == begin || *end != '\0' || v < 0)
    throw std::invalid_argument("stats: not a nonnegative integer count: \"" + s +
                                "\"");
  return v;
}

}  // namespace

const std::vector<std::string>& arm_names() {
  static const std::vector<std::string> names = {
      "ssl_vit",    "scratch_vit",        "ssl_vit_t1ce_only",
      "radiomics_clinical", "clinical_only", "multimodal"};
  return names;
}

bool is_known_arm(const std::string& name) {
  const auto& names = arm_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

RunConfig default_run_config() {
  RunConfig cfg;
  cfg.arms = arm_names();

  // Desk-scale phantom: small volumes, enough unlabeled mass for the
  // pretraining effect to show.
  cfg.phantom.n_unlabeled = 512;
  cfg.phantom.n_labeled = 100;
  cfg.phantom.class_balance = 0.34;
  cfg.phantom.volume_side = 32;
  cfg.phantom.noise_sigma = 0.3;
  cfg.phantom.seed = 20260817;

  cfg.vit.input_side = 32;
  cfg.vit.in_channels = 2;
  cfg.vit.patch_side = 8;
  cfg.vit.embed_dim = 32;
  cfg.vit.depth = 2;
  cfg.vit.heads = 4;
  cfg.vit.mlp_ratio = 2.0;
  cfg.vit.dropout = 0.0;
  cfg.vit.num_classes = 2;
  cfg.vit.proj_dim = 16;

  cfg.pretrain.epochs = 4;
  cfg.pretrain.batch_size = 8;
  cfg.pretrain.lr = 3e-4;
  cfg.pretrain.weight_decay = 0.0;
  cfg.pretrain.lambda_contrastive = 1.0;
  cfg.pretrain.temperature = 0.5;
  cfg.pretrain.n_swaps = 4;

  cfg.finetune.epochs = 10;
  cfg.finetune.batch_size = 8;
  cfg.finetune.lr = 1e-4;
  cfg.finetune.weight_decay = 0.0;

  cfg.selection.variance_threshold = 0.01;
  cfg.selection.correlation_threshold = 0.9;
  cfg.selection.k = 5;
  cfg.selection.grid_size = 50;
  cfg.selection.one_se_rule = false;
  cfg.selection.seed = 0;  // derived from the run seed at use

  return cfg;
}

void check_run_config(const RunConfig& cfg) {
  if (cfg.arms.empty()) throw std::invalid_argument("config: arm list is empty");
  for (const std::string& a : cfg.arms)
    if (!is_known_arm(a)) throw std::invalid_argument("config: unknown arm \"" + a + "\"");
  for (std::size_t i = 0; i < cfg.arms.size(); ++i)
    for (std::size_t j = i + 1; j < cfg.arms.size(); ++j)
      if (cfg.arms[i] == cfg.arms[j])
        throw std::invalid_argument("config: duplicate arm \"" + cfg.arms[i] + "\"");
  const auto listed = [&](const char* n) {
    return std::find(cfg.arms.begin(), cfg.arms.end(), n) != cfg.arms.end();
  };
  if (listed("multimodal") && !listed("ssl_vit"))
    throw std::invalid_argument(
        "config: multimodal requires the ssl_vit arm (its stack consumes the "
        "out-of-fold probabilities)");

  if (cfg.folds < 2) throw std::invalid_argument("config: folds must be >= 2");
  if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0))
    throw std::invalid_argument("config: test_fraction must be in (0,1)");
  if (cfg.glcm_bins < 2) throw std::invalid_argument("config: glcm_bins must be >= 2");
  if (!(cfg.target_spacing_mm > 0.0))
    throw std::invalid_argument("config: target_spacing_mm must be positive");
  if (cfg.cohort_dir.empty() || cfg.out_dir.empty())
    throw std::invalid_argument("config: cohort_dir and out_dir must be set");

  check_phantom_spec(cfg.phantom);
  check_vit_config(cfg.vit);
  if (cfg.vit.in_channels != 2)
    throw std::invalid_argument("config: the shared backbone is two-channel");
  if (cfg.vit.num_classes != 2)
    throw std::invalid_argument("config: num_classes is fixed at 2");

  if (cfg.pretrain.epochs < 1 || cfg.pretrain.batch_size < 1)
    throw std::invalid_argument("config: pretrain epochs and batch_size must be >= 1");
  if (!(cfg.pretrain.lr > 0.0) || !(cfg.pretrain.temperature > 0.0))
    throw std::invalid_argument("config: pretrain lr and temperature must be positive");
  if (cfg.pretrain.n_swaps < 0)
    throw std::invalid_argument("config: pretrain n_swaps must be >= 0");
  if (cfg.finetune.epochs < 1 || cfg.finetune.batch_size < 1)
    throw std::invalid_argument("config: finetune epochs and batch_size must be >= 1");
  if (!(cfg.finetune.lr > 0.0))
    throw std::invalid_argument("config: finetune lr must be positive");

  if (!(cfg.selection.variance_threshold >= 0.0))
    throw std::invalid_argument("config: variance_threshold must be >= 0");
  if (!(cfg.selection.correlation_threshold > 0.0 &&
        cfg.selection.correlation_threshold <= 1.0))
    throw std::invalid_argument("config: correlation_threshold must be in (0,1]");
  if (cfg.selection.k < 2 || cfg.selection.grid_size < 2)
    throw std::invalid_argument("config: selection k and grid_size must be >= 2");

  if (cfg.meta.hidden1 < 1 || cfg.meta.hidden2 < 1)
    throw std::invalid_argument("config: meta hidden widths must be >= 1");
  if (!(cfg.meta.dropout >= 0.0 && cfg.meta.dropout < 1.0))
    throw std::invalid_argument("config: meta dropout must be in [0,1)");
  if (cfg.meta.epochs < 1 || !(cfg.meta.lr > 0.0))
    throw std::invalid_argument("config: meta epochs and lr must be positive");
}

RunConfig run_config_from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object())
    throw std::invalid_argument("config: top level must be a JSON object");

  RunConfig cfg = default_run_config();
  require_keys(j, "the top level",
               {"seed", "cohort_dir", "out_dir", "arms", "folds", "test_fraction",
                "glcm_bins", "target_spacing_mm", "phantom", "vit", "pretrain",
                "finetune", "selection", "meta"});
  read_field(j, "seed", "run", cfg.seed);
  read_field(j, "cohort_dir", "run", cfg.cohort_dir);
  read_field(j, "out_dir", "run", cfg.out_dir);
  read_field(j, "arms", "run", cfg.arms);
  read_field(j, "folds", "run", cfg.folds);
  read_field(j, "test_fraction", "run", cfg.test_fraction);
  read_field(j, "glcm_bins", "run", cfg.glcm_bins);
  read_field(j, "target_spacing_mm", "run", cfg.target_spacing_mm);

  if (const nlohmann::json* p = sub_object(j, "phantom")) {
    require_keys(*p, "phantom",
                 {"n_unlabeled", "n_labeled", "class_balance", "volume_side",
                  "noise_sigma", "seed"});
    read_field(*p, "n_unlabeled", "phantom", cfg.phantom.n_unlabeled);
    read_field(*p, "n_labeled", "phantom", cfg.phantom.n_labeled);
    read_field(*p, "class_balance", "phantom", cfg.phantom.class_balance);
    read_field(*p, "volume_side", "phantom", cfg.phantom.volume_side);
    read_field(*p, "noise_sigma", "phantom", cfg.phantom.noise_sigma);
    read_field(*p, "seed", "phantom", cfg.phantom.seed);
  }
  if (const nlohmann::json* p = sub_object(j, "vit")) {
    require_keys(*p, "vit",
                 {"input_side", "patch_side", "embed_dim", "depth", "heads",
                  "mlp_ratio", "dropout", "proj_dim"});
    read_field(*p, "input_side", "vit", cfg.vit.input_side);
    read_field(*p, "patch_side", "vit", cfg.vit.patch_side);
    read_field(*p, "embed_dim", "vit", cfg.vit.embed_dim);
    read_field(*p, "depth", "vit", cfg.vit.depth);
    read_field(*p, "heads", "vit", cfg.vit.heads);
    read_field(*p, "mlp_ratio", "vit", cfg.vit.mlp_ratio);
    read_field(*p, "dropout", "vit", cfg.vit.dropout);
    read_field(*p, "proj_dim", "vit", cfg.vit.proj_dim);
  }
  if (const nlohmann::json* p = sub_object(j, "pretrain")) {
    require_keys(*p, "pretrain",
                 {"epochs", "batch_size", "lr", "weight_decay", "lambda_contrastive",
                  "temperature", "n_swaps"});
    read_field(*p, "epochs", "pretrain", cfg.pretrain.epochs);
    read_field(*p, "batch_size", "pretrain", cfg.pretrain.batch_size);
    read_field(*p, "lr", "pretrain", cfg.pretrain.lr);
    read_field(*p, "weight_decay", "pretrain", cfg.pretrain.weight_decay);
    read_field(*p, "lambda_contrastive", "pretrain", cfg.pretrain.lambda_contrastive);
    read_field(*p, "temperature", "pretrain", cfg.pretrain.temperature);
    read_field(*p, "n_swaps", "pretrain", cfg.pretrain.n_swaps);
  }
  if (const nlohmann::json* p = sub_object(j, "finetune")) {
    require_keys(*p, "finetune", {"epochs", "batch_size", "lr", "weight_decay"});
    read_field(*p, "epochs", "finetune", cfg.finetune.epochs);
    read_field(*p, "batch_size", "finetune", cfg.finetune.batch_size);
    read_field(*p, "lr", "finetune", cfg.finetune.lr);
    read_field(*p, "weight_decay", "finetune", cfg.finetune.weight_decay);
  }
  if (const nlohmann::json* p = sub_object(j, "selection")) {
    require_keys(*p, "selection",
                 {"variance_threshold", "correlation_threshold", "k", "grid_size",
                  "one_se_rule"});
    read_field(*p, "variance_threshold", "selection", cfg.selection.variance_threshold);
    read_field(*p, "correlation_threshold", "selection",
               cfg.selection.correlation_threshold);
    read_field(*p, "k", "selection", cfg.selection.k);
    read_field(*p, "grid_size", "selection", cfg.selection.grid_size);
    read_field(*p, "one_se_rule", "selection", cfg.selection.one_se_rule);
  }
  if (const nlohmann::json* p = sub_object(j, "meta")) {
    require_keys(*p, "meta",
                 {"hidden1", "hidden2", "dropout", "epochs", "lr", "weight_decay"});
    read_field(*p, "hidden1", "meta", cfg.meta.hidden1);
    read_field(*p, "hidden2", "meta", cfg.meta.hidden2);
    read_field(*p, "dropout", "meta", cfg.meta.dropout);
    read_field(*p, "epochs", "meta", cfg.meta.epochs);
    read_field(*p, "lr", "meta", cfg.meta.lr);
    read_field(*p, "weight_decay", "meta", cfg.meta.weight_decay);
  }

  cfg.vit.in_channels = 2;
  cfg.vit.num_classes = 2;
  cfg.selection.seed = 0;
  check_run_config(cfg);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::invalid_argument("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return run_config_from_json(text);
}

std::string run_config_to_json(const RunConfig& cfg) {
  njson j;
  j["seed"] = cfg.seed;
  j["cohort_dir"] = cfg.cohort_dir;
  j["out_dir"] = cfg.out_dir;
  j["arms"] = cfg.arms;
  j["folds"] = cfg.folds;
  j["test_fraction"] = cfg.test_fraction;
  j["glcm_bins"] = cfg.glcm_bins;
  j["target_spacing_mm"] = cfg.target_spacing_mm;
  j["phantom"] = {{"n_unlabeled", cfg.phantom.n_unlabeled},
                  {"n_labeled", cfg.phantom.n_labeled},
                  {"class_balance", cfg.phantom.class_balance},
                  {"volume_side", cfg.phantom.volume_side},
                  {"noise_sigma", cfg.phantom.noise_sigma},
                  {"seed", cfg.phantom.seed}};
  j["vit"] = {{"input_side", cfg.vit.input_side},
              {"patch_side", cfg.vit.patch_side},
              {"embed_dim", cfg.vit.embed_dim},
              {"depth", cfg.vit.depth},
              {"heads", cfg.vit.heads},
              {"mlp_ratio", cfg.vit.mlp_ratio},
              {"dropout", cfg.vit.dropout},
              {"proj_dim", cfg.vit.proj_dim}};
  j["pretrain"] = {{"epochs", cfg.pretrain.epochs},
                   {"batch_size", cfg.pretrain.batch_size},
                   {"lr", cfg.pretrain.lr},
                   {"weight_decay", cfg.pretrain.weight_decay},
                   {"lambda_contrastive", cfg.pretrain.lambda_contrastive},
                   {"temperature", cfg.pretrain.temperature},
                   {"n_swaps", cfg.pretrain.n_swaps}};
  j["finetune"] = {{"epochs", cfg.finetune.epochs},
                   {"batch_size", cfg.finetune.batch_size},
                   {"lr", cfg.finetune.lr},
                   {"weight_decay", cfg.finetune.weight_decay}};
  j["selection"] = {{"variance_threshold", cfg.selection.variance_threshold},
                    {"correlation_threshold", cfg.selection.correlation_threshold},
                    {"k", cfg.selection.k},
                    {"grid_size", cfg.selection.grid_size},
                    {"one_se_rule", cfg.selection.one_se_rule}};
  j["meta"] = {{"hidden1", cfg.meta.hidden1},
               {"hidden2", cfg.meta.hidden2},
               {"dropout", cfg.meta.dropout},
               {"epochs", cfg.meta.epochs},
               {"lr", cfg.meta.lr},
               {"weight_decay", cfg.meta.weight_decay}};
  return j.dump(2) + "\n";
}

void cmd_generate(const RunConfig& cfg) {
  check_run_config(cfg);
  fs::create_directories(cfg.cohort_dir);
  generate_phantom_cohort(cfg.phantom, cfg.cohort_dir);
}

bool EvalReport::any_failure() const {
  for (const ArmReport& a : arms)
    if (!a.ok) return true;
  return false;
}

const ArmReport* EvalReport::find_arm(const std::string& name) const {
  for (const ArmReport& a : arms)
    if (a.arm == name) return &a;
  return nullptr;
}

std::string eval_report_to_json(const EvalReport& report) {
  njson j;
  j["schema"] = "rndiff-report-v1";
  j["seed"] = report.seed;
  j["config"] = njson::parse(report.config_json);

  njson folds;
  folds["k"] = report.plan.k;
  folds["seed"] = report.plan.seed;
  folds["test_indices"] = report.plan.test_indices;
  folds["pool_indices"] = report.plan.pool_indices;
  folds["fold_val_indices"] = report.plan.fold_val;
  folds["test_ids"] = report.test_ids;
  j["folds"] = std::move(folds);

  njson arms;
  for (const ArmReport& a : report.arms) {
    njson r;
    r["ok"] = a.ok;
    if (!a.ok) {
      r["error"] = a.error;
    } else {
      r["test_auc"] = a.test_auc;
      r["oof_auc"] = a.oof_auc;
      r["test_metrics"] = {{"tp", a.test_metrics.tp},
                           {"fp", a.test_metrics.fp},
                           {"tn", a.test_metrics.tn},
                           {"fn", a.test_metrics.fn},
                           {"accuracy", a.test_metrics.accuracy},
                           {"sensitivity", a.test_metrics.sensitivity},
                           {"specificity", a.test_metrics.specificity},
                           {"threshold", 0.5}};
      r["fold_val_auc"] = a.fold_val_auc;
      r["fold_auc_mean"] = a.fold_auc_dispersion.mean;
      r["fold_auc_sd"] = a.fold_auc_dispersion.sd;
      r["fold_auc_across_folds"] = format_dispersion(a.fold_auc_dispersion);
      njson preds;
      for (std::size_t i = 0; i < a.test_ids.size(); ++i)
        preds[a.test_ids[i]] = a.test_probabilities[i];
      r["test_predictions"] = std::move(preds);
      if (!a.mask_attention_fraction.empty()) {
        njson fr;
        for (std::size_t i = 0; i < a.test_ids.size(); ++i)
          fr[a.test_ids[i]] = a.mask_attention_fraction[i];
        r["mask_attention_fraction"] = std::move(fr);
        r["mean_mask_attention_fraction"] = a.mean_mask_attention_fraction;
      }
    }
    arms[a.arm] = std::move(r);
  }
  j["arms"] = std::move(arms);

  njson tests = njson::array();
  for (const TestResult& t : report.paired_tests) {
    njson e;
    e["name"] = t.name;
    e["statistic"] = t.statistic;
    e["p_value"] = t.p_value;
    e["sidedness"] = t.sidedness;
    e["method"] = t.method;
    tests.push_back(std::move(e));
  }
  j["paired_tests"] = std::move(tests);
  j["notes"] = "deterministic artifact; wall-clock lines are confined to run.log";
  return j.dump(2) + "\n";
}

EvalReport cmd_run(const RunConfig& cfg) {
  check_run_config(cfg);
  fs::create_directories(cfg.out_dir);
  RunLog log(fs::path(cfg.out_dir) / "run.log");

  const std::vector<std::string> arms = dedup_canonical(cfg.arms);
  {
    std::string names;
    for (const std::string& a : arms) names += (names.empty() ? "" : ",") + a;
    log.line("run: seed " + std::to_string(cfg.seed) + ", arms [" + names + "]");
  }

  const auto wants = [&](const char* n) {
    return std::find(arms.begin(), arms.end(), n) != arms.end();
  };
  const bool need_one_ch = wants("ssl_vit_t1ce_only");
  const bool need_unlabeled = wants("ssl_vit") || wants("ssl_vit_t1ce_only");

  const fs::path labeled_index = fs::path(cfg.cohort_dir) / "labeled" / kCohortIndexName;
  const fs::path unlabeled_index =
      fs::path(cfg.cohort_dir) / "unlabeled" / kCohortIndexName;
  if (!fs::exists(labeled_index)) {
    log.line("cohort: no labeled index under " + cfg.cohort_dir + ", generating");
    cmd_generate(cfg);
  } else if (need_unlabeled && !fs::exists(unlabeled_index)) {
    throw std::runtime_error(
        "cohort: labeled set exists but unlabeled is missing; refusing to "
        "overwrite " +
        cfg.cohort_dir);
  }

  const PreparedCohort cohort = prepare_labeled(cfg, need_one_ch, log);

  const FoldPlan plan = make_folds(cohort.labels, cfg.folds, cfg.test_fraction,
                                   stream_seed(cfg.seed, kStreamFolds));
  log.line("folds: k=" + std::to_string(plan.k) +
           " test=" + std::to_string(plan.test_indices.size()) +
           " pool=" + std::to_string(plan.pool_indices.size()));

  // Tabular features for every labeled sample; clinical standardization
  // statistics come from the pool so the held-out test rows stay untouched.
  std::vector<ClinicalRecord> pool_clinical;
  for (int i : plan.pool_indices) pool_clinical.push_back(cohort.clinical[i]);
  const ClinicalStats clin_stats = compute_clinical_stats(pool_clinical);
  const ClinicalVocabulary vocab = default_clinical_vocabulary();
  const FeatureTable features = extract_all(cohort.crops, cohort.clinical, cohort.ids,
                                            vocab, clin_stats, cfg.glcm_bins);
  {
    njson meta;
    meta["glcm_bins"] = cfg.glcm_bins;
    meta["clinical_stats"] = {{"age_mean", clin_stats.age_mean},
                              {"age_sigma", clin_stats.age_sigma},
                              {"recurrence_mean", clin_stats.recurrence_mean},
                              {"recurrence_sigma", clin_stats.recurrence_sigma}};
    write_feature_table(features, (fs::path(cfg.out_dir) / "features.csv").string(),
                        (fs::path(cfg.out_dir) / "features.json").string(),
                        meta.dump(2));
  }
  log.line("features: " + std::to_string(features.rows()) + " rows x " +
           std::to_string(features.cols()) + " cols");

  const FeatureTable pool_features = subset_rows(features, plan.pool_indices);
  std::vector<int> pool_labels;
  for (int i : plan.pool_indices) pool_labels.push_back(cohort.labels[i]);

  std::vector<int> fold_of(cohort.labels.size(), -1);
  for (int f = 0; f < plan.k; ++f)
    for (int i : plan.fold_val[f]) fold_of[i] = f;
  std::vector<int> pool_fold;
  for (int i : plan.pool_indices) pool_fold.push_back(fold_of[i]);

  // Loaded lazily inside the arm loop so a broken unlabeled cohort shows up
  // as a structured failure of the ssl arms instead of aborting the run.
  UnlabeledStacks unlabeled;
  bool unlabeled_ready = false;
  const auto ensure_unlabeled = [&]() -> UnlabeledStacks& {
    if (!unlabeled_ready) {
      unlabeled = load_unlabeled(cfg, wants("ssl_vit"), need_one_ch, log);
      unlabeled_ready = true;
    }
    return unlabeled;
  };

  // Selection cascades are shared: the full-table cascade feeds both the
  // radiomics_clinical arm and the multimodal stack.
  std::optional<SelectionReport> full_selection;
  const auto get_full_selection = [&]() -> const SelectionReport& {
    if (!full_selection) {
      SelectionConfig sc = cfg.selection;
      sc.seed = stream_seed(cfg.seed, kStreamSelectionFull);
      full_selection = select_features(pool_features, pool_labels, sc);
      log.line("selection: retained " +
               std::to_string(full_selection->retained.size()) +
               " columns at lambda " + format_g17(full_selection->chosen_lambda));
    }
    return *full_selection;
  };

  EvalReport report;
  report.seed = cfg.seed;
  report.config_json = run_config_to_json(cfg);
  report.plan = plan;
  for (int i : plan.test_indices) report.test_ids.push_back(cohort.ids[i]);

  std::optional<VitArmOutput> ssl;  // multimodal consumes its predictions

  for (const std::string& arm : arms) {
    try {
      if (arm == "ssl_vit") {
        const ViTParams pre = pretrain_for_arm(
            cfg, arm, cfg.vit, ensure_unlabeled().two,
            stream_seed(cfg.seed, kStreamPretrainTwoCh), log);
        unlabeled.two.clear();
        unlabeled.two.shrink_to_fit();
        ssl = run_vit_arm(cfg, arm, cfg.vit, cohort.two_ch, cohort, plan, &pre,
                          stream_seed(cfg.seed, kStreamFinetuneSsl), true, log);
        report.arms.push_back(ssl->report);
      } else if (arm == "scratch_vit") {
        VitArmOutput out =
            run_vit_arm(cfg, arm, cfg.vit, cohort.two_ch, cohort, plan, nullptr,
                        stream_seed(cfg.seed, kStreamFinetuneScratch), false, log);
        report.arms.push_back(std::move(out.report));
      } else if (arm == "ssl_vit_t1ce_only") {
        ViTConfig one = cfg.vit;
        one.in_channels = 1;
        const ViTParams pre = pretrain_for_arm(
            cfg, arm, one, ensure_unlabeled().one,
            stream_seed(cfg.seed, kStreamPretrainOneCh), log);
        unlabeled.one.clear();
        unlabeled.one.shrink_to_fit();
        VitArmOutput out =
            run_vit_arm(cfg, arm, one, cohort.one_ch, cohort, plan, &pre,
                        stream_seed(cfg.seed, kStreamFinetuneT1ce), true, log);
        report.arms.push_back(std::move(out.report));
      } else if (arm == "radiomics_clinical") {
        const SelectionReport& sel = get_full_selection();
        const StackedDataset stack =
            build_feature_stack(pool_labels, pool_fold, pool_features, sel);
        report.arms.push_back(run_meta_arm(
            cfg, arm, stack, features, sel,
            stream_seed(cfg.seed, kStreamMetaRadiomicsClinical), plan, cohort,
            nullptr, log));
      } else if (arm == "clinical_only") {
        SelectionConfig sc = cfg.selection;
        sc.seed = stream_seed(cfg.seed, kStreamSelectionClinical);
        const SelectionReport sel =
            select_features(subset_columns(pool_features, "clinical"), pool_labels, sc);
        const StackedDataset stack =
            build_feature_stack(pool_labels, pool_fold, pool_features, sel);
        report.arms.push_back(
            run_meta_arm(cfg, arm, stack, features, sel,
                         stream_seed(cfg.seed, kStreamMetaClinicalOnly), plan, cohort,
                         nullptr, log));
      } else if (arm == "multimodal") {
        if (!ssl)
          throw std::runtime_error("dependency arm ssl_vit did not complete");
        const SelectionReport& sel = get_full_selection();
        std::vector<double> pool_oof;
        for (int i : plan.pool_indices) pool_oof.push_back(ssl->ft.oof[i]);
        const StackedDataset stack =
            build_stack(pool_oof, pool_labels, pool_fold, pool_features, sel);
        report.arms.push_back(run_meta_arm(
            cfg, arm, stack, features, sel,
            stream_seed(cfg.seed, kStreamMetaMultimodal), plan, cohort,
            &ssl->report.test_probabilities, log));
      }
    } catch (const std::exception& e) {
      ArmReport failed;
      failed.arm = arm;
      failed.ok = false;
      failed.error = e.what();
      report.arms.push_back(std::move(failed));
      log.line("arm " + arm + " failed: " + e.what());
    }
  }

  for (std::size_t i = 0; i < report.arms.size(); ++i)
    for (std::size_t k = i + 1; k < report.arms.size(); ++k) {
      const ArmReport& a = report.arms[i];
      const ArmReport& b = report.arms[k];
      if (!a.ok || !b.ok) continue;
      TestResult t;
      const std::string name = "paired_t(" + a.arm + "," + b.arm + ")";
      try {
        t = paired_t(a.fold_val_auc, b.fold_val_auc);
        t.name = name;
      } catch (const std::exception& e) {
        t.name = name;
        t.statistic = std::numeric_limits<double>::quiet_NaN();
        t.p_value = std::numeric_limits<double>::quiet_NaN();
        t.sidedness = "two-sided";
        t.method = std::string("not computed: ") + e.what();
      }
      report.paired_tests.push_back(std::move(t));
    }

  write_text(fs::path(cfg.out_dir) / "report.json", eval_report_to_json(report));
  log.line("report: " + (fs::path(cfg.out_dir) / "report.json").string());
  return report;
}

ExplainResult cmd_explain(const RunConfig& cfg, const std::string& checkpoint_stem,
                          const std::string& sample_id) {
  const Checkpoint raw = load_checkpoint(checkpoint_stem);
  ViTConfig vcfg;
  try {
    vcfg = vit_config_from_json(raw.config_json);
  } catch (const std::exception& e) {
    throw std::invalid_argument("checkpoint " + checkpoint_stem +
                                " does not hold an encoder config (" + e.what() +
                                ")");
  }
  const ViTParams params = load_vit_checkpoint(checkpoint_stem, vcfg);

  std::optional<CohortEntry> found;
  for (const char* set : {"labeled", "unlabeled"}) {
    const fs::path dir = fs::path(cfg.cohort_dir) / set;
    if (!fs::exists(dir / kCohortIndexName)) continue;
    for (const CohortEntry& e : read_cohort_index(dir.string()))
      if (e.id == sample_id) {
        found = e;
        break;
      }
    if (found) break;
  }
  if (!found)
    throw std::invalid_argument("sample id not found in cohort: " + sample_id);

  const LesionSample sample = load_sample(*found);
  PreprocessOptions opt;
  opt.target_spacing_mm = cfg.target_spacing_mm;
  opt.crop_side = vcfg.input_side;
  const CroppedSample crop = preprocess_sample(sample, opt);
  const ChannelStack stack = vcfg.in_channels == 2
                                 ? assemble_channels(crop.image, crop.mask)
                                 : assemble_channels(crop.image);

  AttentionTrace trace;
  const Tensor patches = patchify_batch({&stack}, vcfg);
  (void)vit_forward(params, patches, false, nullptr, &trace);

  ExplainResult res;
  res.sample_id = sample_id;
  res.heatmap = attention_rollout(trace, vcfg, crop.image, 0);
  res.mask_fraction = mask_attention_fraction(res.heatmap, crop.mask);
  fs::create_directories(cfg.out_dir);
  res.nifti_path =
      (fs::path(cfg.out_dir) / ("attention_" + sample_id + ".nii")).string();
  write_nifti(res.heatmap, kNiftiFloat64, res.nifti_path);
  return res;
}

std::vector<TestResult> cmd_stats(const std::string& csv_path) {
  const std::vector<std::vector<std::string>> rows = read_csv(csv_path);
  if (rows.size() < 2)
    throw std::invalid_argument("stats: need a header row and at least one data row");
  const std::size_t width = rows[0].size();
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].size() != width)
      throw std::invalid_argument("stats: row " + std::to_string(i + 1) + " has " +
                                  std::to_string(rows[i].size()) + " fields, expected " +
                                  std::to_string(width));

  std::vector<TestResult> out;
  if (width == 2) {
    std::vector<std::string> groups;
    std::vector<std::vector<double>> values;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const std::string& g = rows[i][0];
      std::size_t gi = 0;
      while (gi < groups.size() && groups[gi] != g) ++gi;
      if (gi == groups.size()) {
        if (groups.size() == 2)
          throw std::invalid_argument("stats: more than two groups (third is \"" + g +
                                      "\")");
        groups.push_back(g);
        values.emplace_back();
      }
      values[gi].push_back(parse_strict_double(rows[i][1]));
    }
    if (groups.size() != 2)
      throw std::invalid_argument("stats: exactly two groups required, found " +
                                  std::to_string(groups.size()));
    TestResult mw = mann_whitney_u(values[0], values[1]);
    mw.name += "(" + groups[0] + " vs " + groups[1] + ")";
    out.push_back(std::move(mw));
    for (std::size_t g = 0; g < 2; ++g)
      if (values[g].size() >= 3) {
        TestResult sw = shapiro_wilk(values[g]);
        sw.name += "(" + groups[g] + ")";
        out.push_back(std::move(sw));
      }
  } else if (width == 3) {
    std::vector<std::vector<long long>> table(2);
    for (std::size_t i = 1; i < rows.size(); ++i) {
      table[0].push_back(parse_strict_count(rows[i][1]));
      table[1].push_back(parse_strict_count(rows[i][2]));
    }
    out.push_back(fisher_exact(table));
  } else {
    throw std::invalid_argument(
        "stats: expected 2 columns (group,value) or 3 columns (level,count_a,"
        "count_b), found " +
        std::to_string(width));
  }
  return out;
}

std::string test_result_to_line(const TestResult& r) {
  return r.name + ": statistic=" + format_g17(r.statistic) +
         " p_value=" + format_g17(r.p_value) + " (" + r.sidedness + "; " + r.method +
         ")";
}

}  // namespace rndiff
