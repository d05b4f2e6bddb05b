#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "rndiff/train.hpp"

using namespace rndiff;

namespace {

ChannelStack random_stack(int channels, int side, SplitMix64& rng,
                          double image_offset = 0.0) {
  ChannelStack s;
  s.channels = channels;
  s.dims = {side, side, side};
  s.values.resize(static_cast<std::size_t>(channels) * side * side * side);
  const std::size_t nvox = s.voxel_count();
  for (std::size_t i = 0; i < s.values.size(); ++i)
    s.values[i] = i < nvox ? rng.normal() + image_offset
                           : (rng.bernoulli(0.3) ? 1.0 : 0.0);
  return s;
}

ViTConfig tiny_config(int depth = 1) {
  ViTConfig cfg;
  cfg.input_side = 8;
  cfg.patch_side = 4;
  cfg.in_channels = 2;
  cfg.embed_dim = 16;
  cfg.depth = depth;
  cfg.heads = 2;
  cfg.mlp_ratio = 2.0;
  cfg.dropout = 0.0;
  cfg.proj_dim = 8;
  return cfg;
}

std::vector<double> flat_params(const ViTParams& p) {
  std::vector<double> out;
  for (auto& [name, t] : p.named_parameters())
    out.insert(out.end(), t->values.begin(), t->values.end());
  return out;
}

}  // namespace

TEST_CASE("corrupt_context swaps disjoint image patches and restores exactly") {
  SplitMix64 rng(5);
  ChannelStack x = random_stack(2, 8, rng);

  auto [none, empty_log] = corrupt_context(x, 0, 4, rng);
  CHECK(none.values == x.values);
  CHECK(empty_log.empty());

  auto [corrupted, log] = corrupt_context(x, 4, 4, rng);
  REQUIRE(log.size() == 4u);
  std::vector<int> touched;
  for (auto [a, b] : log) {
    touched.push_back(a);
    touched.push_back(b);
  }
  std::sort(touched.begin(), touched.end());
  CHECK(std::adjacent_find(touched.begin(), touched.end()) == touched.end());

  // Only swapped patches differ, and only on the image channel.
  const std::size_t nvox = x.voxel_count();
  CHECK(std::equal(corrupted.values.begin() + nvox, corrupted.values.end(),
                   x.values.begin() + nvox));
  std::vector<double> orig_toks = patchify(x, 4);
  std::vector<double> corr_toks = patchify(corrupted, 4);
  int differing = 0;
  const int pvec = 2 * 64;
  for (int p = 0; p < 8; ++p) {
    bool diff = false;
    for (int e = 0; e < pvec; ++e)
      if (orig_toks[static_cast<std::size_t>(p) * pvec + e] !=
          corr_toks[static_cast<std::size_t>(p) * pvec + e])
        diff = true;
    differing += diff ? 1 : 0;
  }
  CHECK(differing == 8);  // 4 disjoint pairs on an 8-patch grid touch all 8

  ChannelStack restored = apply_swaps(corrupted, log, 4);
  CHECK(restored.values == x.values);

  CHECK_THROWS_WITH_AS(corrupt_context(x, 5, 4, rng),
                       doctest::Contains("exceeds"), std::invalid_argument);
}

TEST_CASE("view transforms: identity, involution, intensity on image channel only") {
  SplitMix64 rng(9);
  ChannelStack x = random_stack(2, 8, rng);
  const std::size_t nvox = x.voxel_count();

  CHECK(apply_view_transform(x, ViewTransform{}).values == x.values);

  ViewTransform flip_x;
  flip_x.flip[0] = true;
  CHECK(apply_view_transform(apply_view_transform(x, flip_x), flip_x).values ==
        x.values);

  ViewTransform full_turn;
  full_turn.rot_axis = 1;
  full_turn.rot_quarters = 4;
  CHECK(apply_view_transform(x, full_turn).values == x.values);

  ViewTransform affine;
  affine.intensity_scale = 1.05;
  affine.intensity_shift = -0.02;
  ChannelStack shifted = apply_view_transform(x, affine);
  for (std::size_t i = 0; i < nvox; ++i)
    CHECK(shifted.values[i] == doctest::Approx(1.05 * x.values[i] - 0.02).epsilon(1e-15));
  for (std::size_t i = nvox; i < x.values.size(); ++i)
    CHECK(shifted.values[i] == x.values[i]);

  // Any drawn transform keeps the mask channel binary.
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    SplitMix64 r(seed);
    ViewTransform t = draw_view_transform(r);
    ChannelStack v = apply_view_transform(x, t);
    for (std::size_t i = nvox; i < v.values.size(); ++i)
      CHECK((v.values[i] == 0.0 || v.values[i] == 1.0));
  }

  // Recorded transforms reproduce the emitted views.
  SplitMix64 r(77);
  ViewTransform ta, tb;
  auto [va, vb] = augment_views(x, r, &ta, &tb);
  CHECK(apply_view_transform(x, ta).values == va.values);
  CHECK(apply_view_transform(x, tb).values == vb.values);
}

TEST_CASE("pretext batches restore bit-exactly through their swap logs") {
  SplitMix64 rng(13);
  std::vector<ChannelStack> cohort;
  for (int i = 0; i < 3; ++i) cohort.push_back(random_stack(2, 8, rng));
  std::vector<const ChannelStack*> ptrs{&cohort[0], &cohort[1], &cohort[2]};
  PretextBatch pb = make_pretext_batch(ptrs, 2, 4, rng);
  REQUIRE(pb.corrupted.size() == 3u);
  REQUIRE(pb.views.size() == 6u);
  REQUIRE(pb.view_transforms.size() == 6u);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(apply_swaps(pb.corrupted[i], pb.swap_logs[i], 4).values ==
          cohort[i].values);
    CHECK(pb.originals[i].values == cohort[i].values);
  }
}

TEST_CASE("make_folds reproduces the 109-sample protocol arithmetic") {
  std::vector<int> labels(109, 0);
  // 37 necrosis scattered deterministically.
  for (int i = 0; i < 37; ++i) labels[(i * 3 + 1) % 109] = 1;
  REQUIRE(std::count(labels.begin(), labels.end(), 1) == 37);

  FoldPlan plan = make_folds(labels, 5, 0.2, 2026);
  CHECK(plan.test_indices.size() == 22u);
  CHECK(plan.pool_indices.size() == 87u);
  int test_necro = 0;
  for (int idx : plan.test_indices) test_necro += labels[idx];
  CHECK(test_necro == 7);

  // Stratification: 30 pool necrosis -> exactly 6 per fold; 57 progression
  // -> fold sizes {12,12,11,11,11}.
  std::multiset<int> prog_counts;
  for (int f = 0; f < 5; ++f) {
    int necro = 0;
    for (int idx : plan.fold_val[f]) necro += labels[idx];
    CHECK(necro == 6);
    prog_counts.insert(static_cast<int>(plan.fold_val[f].size()) - necro);
  }
  CHECK(prog_counts == std::multiset<int>{11, 11, 11, 12, 12});

  // Disjointness and coverage.
  std::vector<int> seen;
  for (int f = 0; f < 5; ++f)
    seen.insert(seen.end(), plan.fold_val[f].begin(), plan.fold_val[f].end());
  std::sort(seen.begin(), seen.end());
  CHECK(seen == plan.pool_indices);
  for (int idx : plan.test_indices)
    CHECK(!std::binary_search(plan.pool_indices.begin(), plan.pool_indices.end(), idx));
  for (int f = 0; f < 5; ++f) {
    std::vector<int> both = plan.fold_train[f];
    both.insert(both.end(), plan.fold_val[f].begin(), plan.fold_val[f].end());
    std::sort(both.begin(), both.end());
    CHECK(both == plan.pool_indices);
  }

  FoldPlan again = make_folds(labels, 5, 0.2, 2026);
  CHECK(again.test_indices == plan.test_indices);
  CHECK(again.fold_val == plan.fold_val);
  FoldPlan other = make_folds(labels, 5, 0.2, 2027);
  CHECK(other.test_indices != plan.test_indices);
}

TEST_CASE("stratification stays within one of proportional for random cohorts") {
  SplitMix64 rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 50 + static_cast<int>(rng.uniform_int(150));
    const double frac = rng.uniform(0.3, 0.7);
    std::vector<int> labels(n);
    for (int& l : labels) l = rng.bernoulli(frac) ? 1 : 0;
    const int ones = static_cast<int>(std::count(labels.begin(), labels.end(), 1));
    if (ones < 10 || n - ones < 10) continue;
    FoldPlan plan = make_folds(labels, 5, 0.2, 1000 + trial);
    for (int c = 0; c < 2; ++c) {
      int pool_c = 0;
      for (int idx : plan.pool_indices) pool_c += labels[idx] == c ? 1 : 0;
      for (int f = 0; f < 5; ++f) {
        int fold_c = 0;
        for (int idx : plan.fold_val[f]) fold_c += labels[idx] == c ? 1 : 0;
        CHECK(fold_c >= pool_c / 5);
        CHECK(fold_c <= pool_c / 5 + 1);
      }
    }
  }

  std::vector<int> starved(40, 0);
  for (int i = 0; i < 5; ++i) starved[i] = 1;
  CHECK_THROWS_WITH_AS(make_folds(starved, 5, 0.2, 1),
                       doctest::Contains("pool samples"), std::invalid_argument);
}

TEST_CASE("pretraining reduces the loss, is seed-stable, and honors lambda=0") {
  SplitMix64 rng(7);
  std::vector<ChannelStack> cohort;
  for (int i = 0; i < 12; ++i) cohort.push_back(random_stack(2, 8, rng));
  ViTConfig vc = tiny_config(1);
  PretrainConfig pc;
  pc.epochs = 5;
  pc.batch_size = 4;
  pc.lr = 1e-3;
  pc.n_swaps = 2;

  std::ostringstream csv;
  PretrainResult a = pretrain(cohort, vc, pc, 7, &csv);
  REQUIRE(a.log.size() == 5u);
  CHECK(a.log[4].total < a.log[0].total);
  CHECK(a.log[0].contrastive > 0.0);
  int lines = 0;
  for (char c : csv.str()) lines += c == '\n' ? 1 : 0;
  CHECK(lines == 6);
  CHECK(csv.str().rfind("epoch,restoration,contrastive,total\n", 0) == 0);

  PretrainResult b = pretrain(cohort, vc, pc, 7, nullptr);
  CHECK(flat_params(a.params) == flat_params(b.params));

  // lambda = 0: the projection head is never touched.
  PretrainConfig pure = pc;
  pure.lambda_contrastive = 0.0;
  PretrainResult c = pretrain(cohort, vc, pure, 7, nullptr);
  SplitMix64 init_rng = SplitMix64::derive(7, 0);
  ViTParams fresh = init_vit_params(vc, init_rng);
  CHECK(c.params.proj_w1->values == fresh.proj_w1->values);
  CHECK(c.params.proj_w2->values == fresh.proj_w2->values);
  CHECK(c.params.patch_embed_w->values != fresh.patch_embed_w->values);
  for (const EpochLoss& el : c.log) CHECK(el.contrastive == 0.0);

  // Divergence guard: a NaN anywhere in the pipeline aborts with diagnostics.
  std::vector<ChannelStack> poisoned = cohort;
  poisoned[0].values[5] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(pretrain(poisoned, vc, pc, 7, nullptr),
                       doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("finetune produces leak-free out-of-fold predictions and learns") {
  SplitMix64 rng(19);
  std::vector<ChannelStack> inputs;
  std::vector<int> labels;
  for (int i = 0; i < 24; ++i) {
    const int label = i % 2;
    inputs.push_back(random_stack(2, 8, rng, 2.0 * label));
    labels.push_back(label);
  }
  FoldPlan plan = make_folds(labels, 3, 0.25, 5);
  ViTConfig vc = tiny_config(1);
  FinetuneConfig fc;
  fc.epochs = 8;
  fc.batch_size = 4;
  fc.lr = 3e-3;

  FinetuneResult res = finetune(vc, nullptr, plan, inputs, labels, fc, 11);
  REQUIRE(res.fold_models.size() == 3u);
  for (int idx : plan.pool_indices) {
    CHECK(res.oof_fold[idx] >= 0);
    CHECK(res.oof[idx] >= 0.0);
    CHECK(res.oof[idx] <= 1.0);
    // The predicting fold must not have trained on this sample.
    const auto& train = plan.fold_train[res.oof_fold[idx]];
    CHECK(!std::binary_search(train.begin(), train.end(), idx));
  }
  for (int idx : plan.test_indices) {
    CHECK(res.oof_fold[idx] == -1);
    CHECK(std::isnan(res.oof[idx]));
  }

  // Strong synthetic signal: out-of-fold ranking should separate classes.
  double wins = 0.0;
  int pairs = 0;
  for (int i : plan.pool_indices)
    for (int j : plan.pool_indices)
      if (labels[i] == 1 && labels[j] == 0) {
        wins += res.oof[i] > res.oof[j] ? 1.0 : (res.oof[i] == res.oof[j] ? 0.5 : 0.0);
        ++pairs;
      }
  CHECK(wins / pairs > 0.8);

  FinetuneResult rep = finetune(vc, nullptr, plan, inputs, labels, fc, 11);
  for (int idx : plan.pool_indices) CHECK(rep.oof[idx] == res.oof[idx]);
  CHECK(flat_params(rep.fold_models[0]) == flat_params(res.fold_models[0]));

  // Checkpoint-initialized path must reject architecture mismatches.
  ViTConfig one_ch = vc;
  one_ch.in_channels = 1;
  SplitMix64 irng(3);
  ViTParams wrong = init_vit_params(one_ch, irng);
  CHECK_THROWS_WITH_AS(finetune(vc, &wrong, plan, inputs, labels, fc, 11),
                       doctest::Contains("channel"), std::runtime_error);

  // And a matching checkpoint actually seeds every fold.
  SplitMix64 crng(4);
  ViTParams start = init_vit_params(vc, crng);
  FinetuneConfig quick = fc;
  quick.epochs = 1;
  FinetuneResult warm = finetune(vc, &start, plan, inputs, labels, quick, 12);
  CHECK(flat_params(warm.fold_models[0]) != flat_params(start));
  CHECK(flat_params(start) == flat_params(clone_vit_params(start)));

  FoldPlan corrupt = plan;
  corrupt.fold_train[0].push_back(corrupt.fold_val[0][0]);
  std::sort(corrupt.fold_train[0].begin(), corrupt.fold_train[0].end());
  CHECK_THROWS_WITH_AS(finetune(vc, nullptr, corrupt, inputs, labels, fc, 11),
                       doctest::Contains("leak"), std::logic_error);
}

TEST_CASE("predict_proba batches consistently") {
  SplitMix64 rng(23);
  ViTConfig vc = tiny_config(1);
  ViTParams params = init_vit_params(vc, rng);
  std::vector<ChannelStack> stacks;
  for (int i = 0; i < 5; ++i) stacks.push_back(random_stack(2, 8, rng));
  std::vector<const ChannelStack*> ptrs;
  for (auto& s : stacks) ptrs.push_back(&s);
  std::vector<double> whole = predict_proba(params, ptrs, 8);
  std::vector<double> chunked = predict_proba(params, ptrs, 2);
  REQUIRE(whole.size() == 5u);
  for (std::size_t i = 0; i < whole.size(); ++i) {
    CHECK(whole[i] == doctest::Approx(chunked[i]).epsilon(1e-12));
    CHECK(whole[i] > 0.0);
    CHECK(whole[i] < 1.0);
  }
}
