#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "fd_check.hpp"
#include "rndiff/fusion.hpp"
#include "rndiff/rng.hpp"
#include "rndiff/train.hpp"

using namespace rndiff;

namespace {

FeatureTable toy_features(int n, SplitMix64& rng) {
  FeatureTable t;
  t.columns = {{"alpha", "radiomic"}, {"beta", "radiomic"}, {"gamma", "clinical"}};
  for (int r = 0; r < n; ++r) {
    t.row_ids.push_back("p" + std::to_string(r));
    t.values.push_back(rng.normal() * 2.0 + 1.0);
    t.values.push_back(rng.normal());
    t.values.push_back(rng.uniform(40.0, 80.0));
  }
  return t;
}

SelectionReport toy_selection(const FeatureTable& t,
                              const std::vector<std::string>& retained) {
  SelectionReport rep;
  for (int c = 0; c < t.cols(); ++c) {
    double m = 0.0;
    for (int r = 0; r < t.rows(); ++r) m += t.at(r, c);
    m /= t.rows();
    double ss = 0.0;
    for (int r = 0; r < t.rows(); ++r) ss += (t.at(r, c) - m) * (t.at(r, c) - m);
    rep.standardized_columns.push_back(t.columns[c].name);
    rep.column_mean.push_back(m);
    rep.column_sd.push_back(std::sqrt(ss / t.rows()));
  }
  for (const std::string& name : retained) {
    rep.retained.push_back(name);
    rep.coefficients.push_back(1.0);
  }
  return rep;
}

// Weights that route the first input column straight to the output logit,
// exploiting gelu(x) - gelu(-x) = x twice.
MetaModel passthrough_model(int input_dim) {
  MetaConfig cfg;
  cfg.hidden1 = 2;
  cfg.hidden2 = 2;
  cfg.dropout = 0.0;
  SplitMix64 rng(1);
  MetaModel m = init_meta_model(input_dim, cfg, rng);
  std::fill(m.w1->values.begin(), m.w1->values.end(), 0.0);
  m.w1->values[0] = 1.0;   // column 0 -> unit 0
  m.w1->values[1] = -1.0;  // column 0 -> unit 1
  m.w2->values = {1.0, -1.0, -1.0, 1.0};
  m.w3->values = {1.0, -1.0};
  return m;
}

}  // namespace

TEST_CASE("build_stack standardizes survivors and keeps the oof raw") {
  SplitMix64 rng(77);
  FeatureTable t = toy_features(6, rng);
  SelectionReport sel = toy_selection(t, {"alpha", "gamma"});
  std::vector<double> oof = {0.1, 0.9, 0.4, 0.6, 0.2, 0.8};
  std::vector<int> labels = {0, 1, 0, 1, 0, 1};
  std::vector<int> fold = {0, 1, 2, 0, 1, 2};

  StackedDataset stack = build_stack(oof, labels, fold, t, sel);
  CHECK(stack.rows() == 6);
  REQUIRE(stack.cols() == 3);
  CHECK(stack.columns[0] == "oof_probability");
  CHECK(stack.columns[1] == "alpha");
  CHECK(stack.columns[2] == "gamma");
  CHECK(stack.ids == t.row_ids);
  CHECK(stack.labels == labels);
  CHECK(stack.fold == fold);
  for (int r = 0; r < 6; ++r) {
    CHECK(stack.at(r, 0) == oof[r]);
    CHECK(stack.at(r, 1) ==
          doctest::Approx((t.at(r, 0) - sel.column_mean[0]) / sel.column_sd[0])
              .epsilon(1e-12));
    CHECK(stack.at(r, 2) ==
          doctest::Approx((t.at(r, 2) - sel.column_mean[2]) / sel.column_sd[2])
              .epsilon(1e-12));
  }

  SUBCASE("feature-only stack drops the imaging column") {
    StackedDataset fs = build_feature_stack(labels, fold, t, sel);
    CHECK(fs.cols() == 2);
    CHECK(fs.columns[0] == "alpha");
    for (int r = 0; r < 6; ++r) CHECK(fs.at(r, 0) == stack.at(r, 1));
  }

  SUBCASE("schema strictness and range checks") {
    FeatureTable missing = t;
    missing.columns[0].name = "renamed";
    CHECK_THROWS_WITH_AS(build_stack(oof, labels, fold, missing, sel),
                         doctest::Contains("alpha"), std::invalid_argument);
    std::vector<double> bad = oof;
    bad[2] = 1.2;
    CHECK_THROWS_WITH_AS(build_stack(bad, labels, fold, t, sel),
                         doctest::Contains("range"), std::invalid_argument);
    bad[2] = std::nan("");
    CHECK_THROWS_AS(build_stack(bad, labels, fold, t, sel), std::invalid_argument);
    std::vector<int> nofold = fold;
    nofold[1] = -1;
    CHECK_THROWS_WITH_AS(build_stack(oof, labels, nofold, t, sel),
                         doctest::Contains("fold"), std::invalid_argument);
    CHECK_THROWS_AS(build_stack({0.5}, labels, fold, t, sel), std::invalid_argument);
  }

  SUBCASE("csv audit dump") {
    std::string csv = stack_to_csv(stack);
    CHECK(csv.rfind("id,label,fold,oof_probability,alpha,gamma\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
    CHECK(csv.find("p3,1,0,") != std::string::npos);
    CHECK(stack_to_csv(stack) == csv);
  }
}

TEST_CASE("train_meta drives a separable stack below 0.1 BCE") {
  SplitMix64 rng(5);
  StackedDataset stack;
  stack.columns = {"oof_probability", "noise"};
  const int n = 24;
  for (int i = 0; i < n; ++i) {
    const int label = i % 2;
    stack.ids.push_back("s" + std::to_string(i));
    stack.labels.push_back(label);
    stack.fold.push_back(i % 3);
    stack.values.push_back(label == 1 ? 0.9 : 0.1);
    stack.values.push_back(rng.normal());
  }

  MetaConfig cfg;
  MetaTrainResult res = train_meta(stack, cfg, 42);
  REQUIRE(res.loss.size() == 200u);
  CHECK(res.loss.back() < 0.1);
  CHECK(res.loss.front() > res.loss.back());

  SUBCASE("same seed, same weights; different seed diverges") {
    MetaTrainResult again = train_meta(stack, cfg, 42);
    for (std::size_t i = 0; i < res.model.parameters().size(); ++i)
      CHECK(again.model.parameters()[i]->values ==
            res.model.parameters()[i]->values);
    CHECK(again.loss == res.loss);
    MetaTrainResult other = train_meta(stack, cfg, 43);
    CHECK(other.model.w1->values != res.model.w1->values);
  }

  SUBCASE("trained probabilities separate the classes") {
    std::vector<double> p = meta_predict(res.model, stack);
    for (int i = 0; i < n; ++i) {
      CHECK(p[i] >= 0.0);
      CHECK(p[i] <= 1.0);
      CHECK((stack.labels[i] == 1 ? p[i] > 0.5 : p[i] < 0.5));
    }
  }

  SUBCASE("non-finite input trips the divergence guard") {
    StackedDataset poisoned = stack;
    poisoned.values[3] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(train_meta(poisoned, cfg, 42),
                         doctest::Contains("non-finite"), std::runtime_error);
  }
}

TEST_CASE("meta-model gradients match finite differences") {
  MetaConfig cfg;
  cfg.hidden1 = 4;
  cfg.hidden2 = 3;
  cfg.dropout = 0.0;
  SplitMix64 rng(9);
  MetaModel m = init_meta_model(5, cfg, rng);
  std::vector<double> xs(6 * 5);
  for (double& v : xs) v = rng.normal();
  Tensor x = make_tensor({6, 5}, xs);
  const std::vector<double> targets = {1, 0, 1, 1, 0, 0};

  const double err = testing::fd_max_rel_error(
      [&](const std::vector<Tensor>&) {
        return bce_with_logits_loss(meta_logits(m, x), targets);
      },
      m.parameters());
  CHECK(err < 1e-6);
}

TEST_CASE("identity weights pass the oof column through to the logit") {
  MetaModel m = passthrough_model(3);
  SplitMix64 rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    const std::vector<double> row = {rng.uniform(0.0, 1.0), rng.normal(),
                                     rng.normal()};
    CHECK(meta_logit_row(m, row) == doctest::Approx(row[0]).epsilon(1e-12));
    CHECK(meta_predict_row(m, row) ==
          doctest::Approx(1.0 / (1.0 + std::exp(-row[0]))).epsilon(1e-12));
  }
}

TEST_CASE("meta output is a probability for any input") {
  MetaConfig cfg;
  SplitMix64 rng(11);
  MetaModel m = init_meta_model(4, cfg, rng);
  for (int rep = 0; rep < 1000; ++rep) {
    const std::vector<double> row = {rng.normal() * 10.0, rng.normal() * 10.0,
                                     rng.normal() * 10.0, rng.normal() * 10.0};
    const double p = meta_predict_row(m, row);
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    CHECK(std::isfinite(p));
  }
}

TEST_CASE("meta checkpoint round-trips weights and config") {
  MetaConfig cfg;
  cfg.hidden1 = 8;
  cfg.hidden2 = 4;
  SplitMix64 rng(21);
  MetaModel m = init_meta_model(3, cfg, rng);
  namespace fs = std::filesystem;
  const std::string stem = (fs::temp_directory_path() / "rndiff_meta_ck").string();
  save_meta_checkpoint(stem, m, 99);
  MetaModel back = load_meta_checkpoint(stem);
  CHECK(back.input_dim == 3);
  CHECK(back.hidden1 == 8);
  CHECK(back.hidden2 == 4);
  CHECK(back.dropout == m.dropout);
  const std::vector<double> row = {0.4, -1.2, 0.7};
  CHECK(meta_logit_row(back, row) == meta_logit_row(m, row));
}

TEST_CASE("imaging probability is the fold-model mean") {
  ViTConfig cfg;
  cfg.input_side = 8;
  cfg.patch_side = 4;
  cfg.embed_dim = 16;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.proj_dim = 8;
  SplitMix64 r1(100), r2(200);
  std::vector<ViTParams> folds;
  folds.push_back(init_vit_params(cfg, r1));
  folds.push_back(init_vit_params(cfg, r2));

  ChannelStack input;
  input.channels = 2;
  input.dims = {8, 8, 8};
  input.values.resize(2 * 512);
  SplitMix64 rng(7);
  for (double& v : input.values) v = rng.normal();

  const double mean = imaging_probability(folds, input);
  const double a = predict_proba(folds[0], {&input}, 1)[0];
  const double b = predict_proba(folds[1], {&input}, 1)[0];
  CHECK(mean == doctest::Approx(0.5 * (a + b)).epsilon(1e-12));
  CHECK(mean >= 0.0);
  CHECK(mean <= 1.0);

  SUBCASE("multimodal prediction with a pass-through meta equals sigmoid(imaging)") {
    SplitMix64 trng(55);
    FeatureTable t = toy_features(2, trng);
    SelectionReport sel = toy_selection(t, {"beta"});
    MetaModel meta = passthrough_model(2);  // oof + beta
    const double p = predict_multimodal(meta, folds, input, t, 1, sel);
    CHECK(p == doctest::Approx(1.0 / (1.0 + std::exp(-mean))).epsilon(1e-12));
  }
}
