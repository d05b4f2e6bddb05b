#include "rndiff/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "json.hpp"
#include "rndiff/checkpoint.hpp"
#include "rndiff/csv.hpp"
#include "rndiff/optim.hpp"
#include "rndiff/train.hpp"

namespace rndiff {

namespace {

// Standardized values of the selection survivors for one feature row.
void append_selected(const FeatureTable& features, int row,
                     const SelectionReport& selection, std::vector<double>* out) {
  for (const std::string& name : selection.retained) {
    const int col = features.column_index(name);
    if (col < 0)
      throw std::invalid_argument("build_stack: retained column " + name +
                                  " missing from feature table");
    std::size_t s = 0;
    while (s < selection.standardized_columns.size() &&
           selection.standardized_columns[s] != name)
      ++s;
    if (s == selection.standardized_columns.size())
      throw std::logic_error("build_stack: selection report lacks stats for " + name);
    out->push_back((features.at(row, col) - selection.column_mean[s]) /
                   selection.column_sd[s]);
  }
}

StackedDataset assemble(const std::vector<double>* oof,
                        const std::vector<int>& labels,
                        const std::vector<int>& fold_assignment,
                        const FeatureTable& features,
                        const SelectionReport& selection) {
  check_feature_table(features);
  const int n = features.rows();
  if (static_cast<int>(labels.size()) != n ||
      static_cast<int>(fold_assignment.size()) != n ||
      (oof && static_cast<int>(oof->size()) != n))
    throw std::invalid_argument("build_stack: row count mismatch");
  for (int l : labels)
    if (l != 0 && l != 1)
      throw std::invalid_argument("build_stack: labels must be 0 or 1");
  for (int f : fold_assignment)
    if (f < 0)
      throw std::invalid_argument("build_stack: sample without a fold assignment");
  if (oof)
    for (double p : *oof)
      if (!(p >= 0.0 && p <= 1.0))
        throw std::invalid_argument("build_stack: oof probability out of range [0,1]");

  StackedDataset stack;
  stack.ids = features.row_ids;
  stack.labels = labels;
  stack.fold = fold_assignment;
  if (oof) stack.columns.push_back(kOofColumn);
  for (const std::string& name : selection.retained) stack.columns.push_back(name);
  stack.values.reserve(static_cast<std::size_t>(n) * stack.columns.size());
  for (int r = 0; r < n; ++r) {
    if (oof) stack.values.push_back((*oof)[r]);
    append_selected(features, r, selection, &stack.values);
  }
  return stack;
}

}  // namespace

StackedDataset build_stack(const std::vector<double>& oof,
                           const std::vector<int>& labels,
                           const std::vector<int>& fold_assignment,
                           const FeatureTable& features,
                           const SelectionReport& selection) {
  return assemble(&oof, labels, fold_assignment, features, selection);
}

StackedDataset build_feature_stack(const std::vector<int>& labels,
                                   const std::vector<int>& fold_assignment,
                                   const FeatureTable& features,
                                   const SelectionReport& selection) {
  return assemble(nullptr, labels, fold_assignment, features, selection);
}

std::string stack_to_csv(const StackedDataset& stack) {
  std::string out = "id,label,fold";
  for (const std::string& c : stack.columns) out += "," + c;
  out += "\n";
  for (int r = 0; r < stack.rows(); ++r) {
    out += stack.ids[r] + "," + std::to_string(stack.labels[r]) + "," +
           std::to_string(stack.fold[r]);
    for (int c = 0; c < stack.cols(); ++c) out += "," + format_g17(stack.at(r, c));
    out += "\n";
  }
  return out;
}

std::vector<Tensor> MetaModel::parameters() const {
  return {w1, b1, w2, b2, w3, b3};
}

std::vector<std::pair<std::string, Tensor>> MetaModel::named_parameters() const {
  return {{"meta.w1", w1}, {"meta.b1", b1}, {"meta.w2", w2},
          {"meta.b2", b2}, {"meta.w3", w3}, {"meta.b3", b3}};
}

MetaModel init_meta_model(int input_dim, const MetaConfig& cfg, SplitMix64& rng) {
  if (input_dim < 1 || cfg.hidden1 < 1 || cfg.hidden2 < 1)
    throw std::invalid_argument("init_meta_model: dimensions must be positive");
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0)
    throw std::invalid_argument("init_meta_model: dropout must be in [0,1)");
  MetaModel m;
  m.input_dim = input_dim;
  m.hidden1 = cfg.hidden1;
  m.hidden2 = cfg.hidden2;
  m.dropout = cfg.dropout;
  auto dense = [&rng](int fan_in, int fan_out) {
    std::vector<double> v(static_cast<std::size_t>(fan_in) * fan_out);
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& x : v) x = s * rng.normal();
    return make_tensor({fan_in, fan_out}, std::move(v), true);
  };
  m.w1 = dense(input_dim, cfg.hidden1);
  m.b1 = make_tensor({cfg.hidden1}, 0.0, true);
  m.w2 = dense(cfg.hidden1, cfg.hidden2);
  m.b2 = make_tensor({cfg.hidden2}, 0.0, true);
  m.w3 = dense(cfg.hidden2, 1);
  m.b3 = make_tensor({1}, 0.0, true);
  return m;
}

Tensor meta_logits(const MetaModel& m, const Tensor& x, bool training,
                   SplitMix64* dropout_rng) {
  if (x->shape.size() != 2 || x->shape[1] != m.input_dim)
    throw std::invalid_argument("meta_logits: expected shape (n, input_dim)");
  const bool drop = training && m.dropout > 0.0;
  if (drop && !dropout_rng)
    throw std::invalid_argument("meta_logits: training with dropout needs an rng");
  Tensor h = gelu(add(matmul(x, m.w1), m.b1));
  if (drop) h = dropout(h, m.dropout, *dropout_rng);
  h = gelu(add(matmul(h, m.w2), m.b2));
  if (drop) h = dropout(h, m.dropout, *dropout_rng);
  return add(matmul(h, m.w3), m.b3);
}

std::vector<double> meta_predict(const MetaModel& m, const StackedDataset& stack) {
  if (stack.cols() != m.input_dim)
    throw std::invalid_argument("meta_predict: stack width does not match model");
  Tensor x = make_tensor({stack.rows(), stack.cols()}, stack.values);
  Tensor z = meta_logits(m, x);
  std::vector<double> p(z->values.size());
  for (std::size_t i = 0; i < p.size(); ++i)
    p[i] = 1.0 / (1.0 + std::exp(-z->values[i]));
  return p;
}

double meta_logit_row(const MetaModel& m, const std::vector<double>& row) {
  Tensor x = make_tensor({1, static_cast<int>(row.size())}, row);
  return meta_logits(m, x)->values[0];
}

double meta_predict_row(const MetaModel& m, const std::vector<double>& row) {
  return 1.0 / (1.0 + std::exp(-meta_logit_row(m, row)));
}

MetaTrainResult train_meta(const StackedDataset& stack, const MetaConfig& cfg,
                           std::uint64_t seed) {
  if (stack.rows() < 2 || stack.cols() < 1)
    throw std::invalid_argument("train_meta: stack is empty");
  SplitMix64 init_rng = SplitMix64::derive(seed, 0);
  SplitMix64 drop_rng = SplitMix64::derive(seed, 1);

  MetaTrainResult res;
  res.model = init_meta_model(stack.cols(), cfg, init_rng);

  Tensor x = make_tensor({stack.rows(), stack.cols()}, stack.values);
  std::vector<double> targets(stack.labels.begin(), stack.labels.end());

  AdamConfig adam;
  adam.lr = cfg.lr;
  adam.weight_decay = cfg.weight_decay;
  AdamW opt(res.model.parameters(), adam);
  res.loss.reserve(cfg.epochs);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Tensor loss = bce_with_logits_loss(
        meta_logits(res.model, x, true, &drop_rng), targets);
    const double value = loss->values[0];
    if (!std::isfinite(value)) {
      char buf[128];
      std::snprintf(buf, sizeof(buf),
                    "train_meta diverged: non-finite loss %g at epoch %d", value,
                    epoch);
      throw std::runtime_error(buf);
    }
    res.loss.push_back(value);
    opt.zero_grad();
    backward(loss);
    opt.step();
  }
  return res;
}

void save_meta_checkpoint(const std::string& stem, const MetaModel& m,
                          std::uint64_t master_seed) {
  nlohmann::ordered_json cfg;
  cfg["input_dim"] = m.input_dim;
  cfg["hidden1"] = m.hidden1;
  cfg["hidden2"] = m.hidden2;
  cfg["dropout"] = m.dropout;
  save_checkpoint(stem, m.named_parameters(), master_seed, 0, cfg.dump());
}

MetaModel load_meta_checkpoint(const std::string& stem) {
  Checkpoint ck = load_checkpoint(stem);
  const nlohmann::json cfg = nlohmann::json::parse(ck.config_json);
  MetaModel m;
  m.input_dim = cfg.at("input_dim").get<int>();
  m.hidden1 = cfg.at("hidden1").get<int>();
  m.hidden2 = cfg.at("hidden2").get<int>();
  m.dropout = cfg.at("dropout").get<double>();
  m.w1 = ck.find("meta.w1");
  m.b1 = ck.find("meta.b1");
  m.w2 = ck.find("meta.w2");
  m.b2 = ck.find("meta.b2");
  m.w3 = ck.find("meta.w3");
  m.b3 = ck.find("meta.b3");
  const Shape want_w1 = {m.input_dim, m.hidden1};
  if (m.w1->shape != want_w1 || m.w3->shape != Shape{m.hidden2, 1})
    throw std::runtime_error("load_meta_checkpoint: tensor shapes do not match config");
  return m;
}

double imaging_probability(const std::vector<ViTParams>& fold_models,
                           const ChannelStack& input) {
  if (fold_models.empty())
    throw std::invalid_argument("imaging_probability: no fold models");
  double sum = 0.0;
  for (const ViTParams& m : fold_models) sum += predict_proba(m, {&input}, 1)[0];
  return sum / static_cast<double>(fold_models.size());
}

std::vector<double> stack_row(const FeatureTable& features, int row,
                              const SelectionReport& selection,
                              const double* imaging_prob) {
  if (row < 0 || row >= features.rows())
    throw std::invalid_argument("stack_row: row out of range");
  std::vector<double> out;
  if (imaging_prob) {
    if (!(*imaging_prob >= 0.0 && *imaging_prob <= 1.0))
      throw std::invalid_argument("stack_row: imaging probability out of range [0,1]");
    out.push_back(*imaging_prob);
  }
  append_selected(features, row, selection, &out);
  return out;
}

double predict_multimodal(const MetaModel& meta,
                          const std::vector<ViTParams>& fold_models,
                          const ChannelStack& input,
                          const FeatureTable& features, int row,
                          const SelectionReport& selection) {
  const double imaging = imaging_probability(fold_models, input);
  const std::vector<double> x = stack_row(features, row, selection, &imaging);
  if (static_cast<int>(x.size()) != meta.input_dim)
    throw std::invalid_argument("predict_multimodal: stacked row width mismatch");
  return meta_predict_row(meta, x);
}

}  // namespace rndiff
