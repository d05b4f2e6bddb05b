#include "rndiff/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "rndiff/csv.hpp"
#include "rndiff/optim.hpp"

namespace rndiff {

namespace {

struct PatchGrid {
  int side = 0;        // cube side
  int patch_side = 0;
  int per_axis = 0;
  int n_patches() const { return per_axis * per_axis * per_axis; }
};

PatchGrid patch_grid(const ChannelStack& s, int patch_side) {
  if (s.dims[0] != s.dims[1] || s.dims[0] != s.dims[2])
    throw std::invalid_argument("pretext: input must be a cube");
  if (patch_side <= 0 || s.dims[0] % patch_side != 0)
    throw std::invalid_argument("pretext: patch_side must divide the cube side");
  return {s.dims[0], patch_side, s.dims[0] / patch_side};
}

/// Copies one patch of one channel into / out of a scratch buffer.
void swap_image_patches(ChannelStack& s, const PatchGrid& g, int pa, int pb) {
  auto patch_origin = [&](int p) {
    const int px = p % g.per_axis;
    const int py = (p / g.per_axis) % g.per_axis;
    const int pz = p / (g.per_axis * g.per_axis);
    return std::array<int, 3>{px * g.patch_side, py * g.patch_side,
                              pz * g.patch_side};
  };
  const auto oa = patch_origin(pa);
  const auto ob = patch_origin(pb);
  const std::size_t S = static_cast<std::size_t>(g.side);
  for (int vz = 0; vz < g.patch_side; ++vz)
    for (int vy = 0; vy < g.patch_side; ++vy)
      for (int vx = 0; vx < g.patch_side; ++vx) {
        const std::size_t ia =
            (oa[0] + vx) + S * ((oa[1] + vy) + S * (oa[2] + vz));
        const std::size_t ib =
            (ob[0] + vx) + S * ((ob[1] + vy) + S * (ob[2] + vz));
        std::swap(s.values[ia], s.values[ib]);  // image channel = offset 0
      }
}

}  // namespace

std::pair<ChannelStack, std::vector<std::pair<int, int>>> corrupt_context(
    const ChannelStack& input, int n_swaps, int patch_side, SplitMix64& rng) {
  const PatchGrid g = patch_grid(input, patch_side);
  if (n_swaps < 0) throw std::invalid_argument("corrupt_context: n_swaps < 0");
  if (n_swaps > g.n_patches() / 2)
    throw std::invalid_argument(
        "corrupt_context: n_swaps " + std::to_string(n_swaps) +
        " exceeds half the patch count (" + std::to_string(g.n_patches()) + ")");
  // Disjoint pairs: partial Fisher-Yates draw of 2*n_swaps distinct patches.
  std::vector<int> pool(g.n_patches());
  std::iota(pool.begin(), pool.end(), 0);
  std::vector<std::pair<int, int>> swap_log;
  swap_log.reserve(n_swaps);
  ChannelStack out = input;
  for (int sidx = 0; sidx < 2 * n_swaps; ++sidx) {
    const std::size_t j = sidx + rng.uniform_int(pool.size() - sidx);
    std::swap(pool[sidx], pool[j]);
  }
  for (int k = 0; k < n_swaps; ++k) {
    swap_log.emplace_back(pool[2 * k], pool[2 * k + 1]);
    swap_image_patches(out, g, pool[2 * k], pool[2 * k + 1]);
  }
  return {std::move(out), std::move(swap_log)};
}

ChannelStack apply_swaps(const ChannelStack& input,
                         const std::vector<std::pair<int, int>>& swap_log,
                         int patch_side) {
  const PatchGrid g = patch_grid(input, patch_side);
  ChannelStack out = input;
  for (const auto& [a, b] : swap_log) {
    if (a < 0 || b < 0 || a >= g.n_patches() || b >= g.n_patches())
      throw std::invalid_argument("apply_swaps: patch index out of range");
    swap_image_patches(out, g, a, b);
  }
  return out;
}

ViewTransform draw_view_transform(SplitMix64& rng) {
  ViewTransform t;
  for (int a = 0; a < 3; ++a) t.flip[a] = rng.bernoulli(0.5);
  t.rot_axis = static_cast<int>(rng.uniform_int(3));
  t.rot_quarters = static_cast<int>(rng.uniform_int(4));
  t.intensity_scale = rng.uniform(0.9, 1.1);
  t.intensity_shift = rng.uniform(-0.1, 0.1);
  return t;
}

namespace {

ChannelStack quarter_turn(const ChannelStack& in, int axis) {
  const int S = in.dims[0];
  ChannelStack out = in;
  const std::size_t nvox = in.voxel_count();
  for (int c = 0; c < in.channels; ++c) {
    const double* src = in.values.data() + static_cast<std::size_t>(c) * nvox;
    double* dst = out.values.data() + static_cast<std::size_t>(c) * nvox;
    for (int z = 0; z < S; ++z)
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
          int nx = x, ny = y, nz = z;
          switch (axis) {
            case 0:  // (y,z) -> (S-1-z, y)
              ny = S - 1 - z;
              nz = y;
              break;
            case 1:  // (z,x) -> (S-1-x, z)
              nz = S - 1 - x;
              nx = z;
              break;
            default:  // (x,y) -> (S-1-y, x)
              nx = S - 1 - y;
              ny = x;
              break;
          }
          dst[nx + static_cast<std::size_t>(S) * (ny + static_cast<std::size_t>(S) * nz)] =
              src[x + static_cast<std::size_t>(S) * (y + static_cast<std::size_t>(S) * z)];
        }
  }
  return out;
}

}  // namespace

ChannelStack apply_view_transform(const ChannelStack& input,
                                  const ViewTransform& t) {
  if (input.dims[0] != input.dims[1] || input.dims[0] != input.dims[2])
    throw std::invalid_argument("apply_view_transform: input must be a cube");
  const int S = input.dims[0];
  ChannelStack out = input;
  const std::size_t nvox = input.voxel_count();
  // Flips first.
  if (t.flip[0] || t.flip[1] || t.flip[2]) {
    for (int c = 0; c < input.channels; ++c) {
      const double* src = input.values.data() + static_cast<std::size_t>(c) * nvox;
      double* dst = out.values.data() + static_cast<std::size_t>(c) * nvox;
      for (int z = 0; z < S; ++z)
        for (int y = 0; y < S; ++y)
          for (int x = 0; x < S; ++x) {
            const int sx = t.flip[0] ? S - 1 - x : x;
            const int sy = t.flip[1] ? S - 1 - y : y;
            const int sz = t.flip[2] ? S - 1 - z : z;
            dst[x + static_cast<std::size_t>(S) * (y + static_cast<std::size_t>(S) * z)] =
                src[sx + static_cast<std::size_t>(S) * (sy + static_cast<std::size_t>(S) * sz)];
          }
    }
  }
  for (int q = 0; q < t.rot_quarters % 4; ++q) out = quarter_turn(out, t.rot_axis);
  // Intensity affine on the image channel only.
  for (std::size_t i = 0; i < nvox; ++i)
    out.values[i] = t.intensity_scale * out.values[i] + t.intensity_shift;
  return out;
}

std::pair<ChannelStack, ChannelStack> augment_views(const ChannelStack& input,
                                                    SplitMix64& rng,
                                                    ViewTransform* ta,
                                                    ViewTransform* tb) {
  ViewTransform a = draw_view_transform(rng);
  ViewTransform b = draw_view_transform(rng);
  if (ta) *ta = a;
  if (tb) *tb = b;
  return {apply_view_transform(input, a), apply_view_transform(input, b)};
}

PretextBatch make_pretext_batch(const std::vector<const ChannelStack*>& samples,
                                int n_swaps, int patch_side, SplitMix64& rng) {
  if (samples.empty())
    throw std::invalid_argument("make_pretext_batch: empty batch");
  PretextBatch pb;
  pb.corrupted.reserve(samples.size());
  pb.originals.reserve(samples.size());
  pb.swap_logs.reserve(samples.size());
  pb.views.reserve(2 * samples.size());
  pb.view_transforms.reserve(2 * samples.size());
  for (const ChannelStack* s : samples) {
    auto [corrupted, log] = corrupt_context(*s, n_swaps, patch_side, rng);
    pb.corrupted.push_back(std::move(corrupted));
    pb.originals.push_back(*s);
    pb.swap_logs.push_back(std::move(log));
    ViewTransform ta, tb;
    auto [va, vb] = augment_views(*s, rng, &ta, &tb);
    pb.views.push_back(std::move(va));
    pb.views.push_back(std::move(vb));
    pb.view_transforms.push_back(ta);
    pb.view_transforms.push_back(tb);
  }
  return pb;
}

namespace {

std::vector<const ChannelStack*> to_ptrs(const std::vector<ChannelStack>& v) {
  std::vector<const ChannelStack*> out;
  out.reserve(v.size());
  for (const auto& s : v) out.push_back(&s);
  return out;
}

void shuffle_indices(std::vector<int>& idx, SplitMix64& rng) {
  for (std::size_t i = 0; i + 1 < idx.size(); ++i) {
    const std::size_t j = i + rng.uniform_int(idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
}

[[noreturn]] void diverged(const char* phase, double loss, int epoch, int step) {
  char msg[160];
  std::snprintf(msg, sizeof msg,
                "%s diverged: non-finite loss %g at epoch %d step %d", phase,
                loss, epoch, step);
  throw std::runtime_error(msg);
}

}  // namespace

PretrainResult pretrain(const std::vector<ChannelStack>& cohort,
                        const ViTConfig& vit_cfg, const PretrainConfig& cfg,
                        std::uint64_t seed, std::ostream* log_csv) {
  check_vit_config(vit_cfg);
  if (cohort.empty()) throw std::invalid_argument("pretrain: empty cohort");
  if (cfg.epochs <= 0 || cfg.batch_size <= 0)
    throw std::invalid_argument("pretrain: epochs and batch_size must be positive");
  if (cfg.lambda_contrastive < 0.0)
    throw std::invalid_argument("pretrain: lambda_contrastive must be >= 0");

  SplitMix64 init_rng = SplitMix64::derive(seed, 0);
  PretrainResult res{init_vit_params(vit_cfg, init_rng), {}};
  AdamConfig oc;
  oc.lr = cfg.lr;
  oc.weight_decay = cfg.weight_decay;
  AdamW opt(res.params.parameters(), oc);
  SplitMix64 order_rng = SplitMix64::derive(seed, 1);
  SplitMix64 step_rng = SplitMix64::derive(seed, 2);

  if (log_csv) *log_csv << "epoch,restoration,contrastive,total\n";

  std::vector<int> order(cohort.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_indices(order, order_rng);
    double rest_sum = 0.0, con_sum = 0.0, total_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const ChannelStack*> batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&cohort[order[i]]);

      PretextBatch pb =
          make_pretext_batch(batch, cfg.n_swaps, vit_cfg.patch_side, step_rng);
      Tensor corrupted = patchify_batch(to_ptrs(pb.corrupted), vit_cfg);
      Tensor target = patchify_batch(to_ptrs(pb.originals), vit_cfg);
      ViTOutput enc = vit_forward(res.params, corrupted, true, &step_rng, nullptr);
      Tensor rec = mse_loss(vit_reconstruct(res.params, enc.patch_tokens), target);

      Tensor total = rec;
      double con_val = 0.0;
      if (cfg.lambda_contrastive > 0.0) {
        Tensor views = patchify_batch(to_ptrs(pb.views), vit_cfg);
        ViTOutput venc = vit_forward(res.params, views, true, &step_rng, nullptr);
        Tensor con =
            nt_xent_loss(vit_project(res.params, venc.cls_embed), cfg.temperature);
        con_val = con->values[0];
        total = add(rec, mul_scalar(con, cfg.lambda_contrastive));
      }

      const double rest_val = rec->values[0];
      const double total_val = total->values[0];
      if (!std::isfinite(total_val))
        diverged("pretraining", total_val, epoch, batches);
      opt.zero_grad();
      backward(total);
      opt.step();
      rest_sum += rest_val;
      con_sum += con_val;
      total_sum += total_val;
      ++batches;
    }
    EpochLoss el{epoch, rest_sum / batches, con_sum / batches, total_sum / batches};
    res.log.push_back(el);
    if (log_csv)
      *log_csv << el.epoch << ',' << format_g17(el.restoration) << ','
               << format_g17(el.contrastive) << ',' << format_g17(el.total)
               << '\n';
  }
  return res;
}

FoldPlan make_folds(const std::vector<int>& labels, int k, double test_fraction,
                    std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("make_folds: k must be at least 2");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("make_folds: test_fraction must be in [0,1)");
  const int n = static_cast<int>(labels.size());
  int n_classes = 0;
  for (int l : labels) {
    if (l < 0) throw std::invalid_argument("make_folds: negative label");
    n_classes = std::max(n_classes, l + 1);
  }
  if (n_classes < 1) throw std::invalid_argument("make_folds: empty label vector");

  // Per-class index lists, each shuffled on its own stream.
  std::vector<std::vector<int>> by_class(n_classes);
  for (int i = 0; i < n; ++i) by_class[labels[i]].push_back(i);
  for (int c = 0; c < n_classes; ++c) {
    SplitMix64 rng = SplitMix64::derive(seed, 0x0F0 + static_cast<std::uint64_t>(c));
    shuffle_indices(by_class[c], rng);
  }

  // Largest-remainder test quotas, total pinned to round(fraction * n).
  const int test_total =
      static_cast<int>(std::llround(test_fraction * static_cast<double>(n)));
  std::vector<int> quota(n_classes);
  std::vector<std::pair<double, int>> remainders;
  int assigned = 0;
  for (int c = 0; c < n_classes; ++c) {
    const double exact = test_fraction * static_cast<double>(by_class[c].size());
    quota[c] = static_cast<int>(std::floor(exact));
    assigned += quota[c];
    remainders.emplace_back(exact - quota[c], c);
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;  // deterministic tie-break: lower class first
  });
  for (int extra = 0; extra < test_total - assigned; ++extra)
    ++quota[remainders[static_cast<std::size_t>(extra) % remainders.size()].second];

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  std::vector<std::vector<int>> pool_by_class(n_classes);
  for (int c = 0; c < n_classes; ++c) {
    if (quota[c] > static_cast<int>(by_class[c].size()))
      throw std::invalid_argument("make_folds: test quota exceeds a class");
    for (std::size_t i = 0; i < by_class[c].size(); ++i) {
      if (i < static_cast<std::size_t>(quota[c]))
        plan.test_indices.push_back(by_class[c][i]);
      else
        pool_by_class[c].push_back(by_class[c][i]);
    }
    if (static_cast<int>(pool_by_class[c].size()) < k)
      throw std::invalid_argument(
          "make_folds: class " + std::to_string(c) + " has only " +
          std::to_string(pool_by_class[c].size()) + " pool samples for " +
          std::to_string(k) + " folds");
  }

  // Round-robin deal per class keeps every fold within +-1 of proportional.
  std::vector<std::vector<int>> folds(k);
  for (int c = 0; c < n_classes; ++c)
    for (std::size_t i = 0; i < pool_by_class[c].size(); ++i)
      folds[i % k].push_back(pool_by_class[c][i]);

  for (int c = 0; c < n_classes; ++c)
    plan.pool_indices.insert(plan.pool_indices.end(), pool_by_class[c].begin(),
                             pool_by_class[c].end());
  std::sort(plan.pool_indices.begin(), plan.pool_indices.end());
  std::sort(plan.test_indices.begin(), plan.test_indices.end());

  plan.fold_val.resize(k);
  plan.fold_train.resize(k);
  for (int f = 0; f < k; ++f) {
    plan.fold_val[f] = folds[f];
    std::sort(plan.fold_val[f].begin(), plan.fold_val[f].end());
    for (int g = 0; g < k; ++g)
      if (g != f)
        plan.fold_train[f].insert(plan.fold_train[f].end(), folds[g].begin(),
                                  folds[g].end());
    std::sort(plan.fold_train[f].begin(), plan.fold_train[f].end());
  }
  return plan;
}

std::vector<double> predict_proba(const ViTParams& params,
                                  const std::vector<const ChannelStack*>& samples,
                                  int batch_size) {
  if (batch_size <= 0)
    throw std::invalid_argument("predict_proba: batch_size must be positive");
  std::vector<double> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop =
        std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const ChannelStack*> batch(samples.begin() + start,
                                           samples.begin() + stop);
    Tensor patches = patchify_batch(batch, params.cfg);
    ViTOutput enc = vit_forward(params, patches, false, nullptr, nullptr);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const double l0 = enc.logits->values[2 * b];
      const double l1 = enc.logits->values[2 * b + 1];
      const double m = std::max(l0, l1);
      const double e0 = std::exp(l0 - m);
      const double e1 = std::exp(l1 - m);
      out.push_back(e1 / (e0 + e1));
    }
  }
  return out;
}

FinetuneResult finetune(const ViTConfig& vit_cfg, const ViTParams* init,
                        const FoldPlan& plan,
                        const std::vector<ChannelStack>& inputs,
                        const std::vector<int>& labels,
                        const FinetuneConfig& cfg, std::uint64_t seed) {
  check_vit_config(vit_cfg);
  if (inputs.size() != labels.size())
    throw std::invalid_argument("finetune: inputs and labels disagree in length");
  if (cfg.epochs <= 0 || cfg.batch_size <= 0)
    throw std::invalid_argument("finetune: epochs and batch_size must be positive");
  if (init) check_vit_arch_match(init->cfg, vit_cfg);
  const int k = plan.k;
  if (static_cast<int>(plan.fold_val.size()) != k ||
      static_cast<int>(plan.fold_train.size()) != k)
    throw std::invalid_argument("finetune: fold plan is incomplete");
  for (int idx : plan.pool_indices) {
    if (idx < 0 || idx >= static_cast<int>(inputs.size()))
      throw std::invalid_argument("finetune: fold plan index out of range");
    if (labels[idx] != 0 && labels[idx] != 1)
      throw std::invalid_argument("finetune: pool labels must be 0 or 1");
  }

  FinetuneResult res;
  res.oof.assign(inputs.size(), std::numeric_limits<double>::quiet_NaN());
  res.oof_fold.assign(inputs.size(), -1);

  for (int f = 0; f < k; ++f) {
    // Leakage guard: a fold's training set must never meet its validation set.
    for (int idx : plan.fold_val[f])
      if (std::binary_search(plan.fold_train[f].begin(), plan.fold_train[f].end(),
                             idx))
        throw std::logic_error("finetune: fold plan leaks validation into training");

    ViTParams params = [&] {
      if (init) return clone_vit_params(*init);
      SplitMix64 rng = SplitMix64::derive(seed, 0x5C0 + static_cast<std::uint64_t>(f));
      return init_vit_params(vit_cfg, rng);
    }();
    AdamConfig oc;
    oc.lr = cfg.lr;
    oc.weight_decay = cfg.weight_decay;
    AdamW opt(params.parameters(), oc);
    SplitMix64 order_rng = SplitMix64::derive(seed, 0xA00 + static_cast<std::uint64_t>(f));
    SplitMix64 step_rng = SplitMix64::derive(seed, 0xB00 + static_cast<std::uint64_t>(f));

    std::vector<int> order = plan.fold_train[f];
    std::vector<double> curve;
    curve.reserve(cfg.epochs);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
      shuffle_indices(order, order_rng);
      double loss_sum = 0.0;
      int batches = 0;
      for (std::size_t start = 0; start < order.size();
           start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t stop =
            std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
        std::vector<const ChannelStack*> batch;
        std::vector<int> batch_labels;
        for (std::size_t i = start; i < stop; ++i) {
          batch.push_back(&inputs[order[i]]);
          batch_labels.push_back(labels[order[i]]);
        }
        Tensor patches = patchify_batch(batch, vit_cfg);
        ViTOutput enc = vit_forward(params, patches, true, &step_rng, nullptr);
        Tensor loss = cross_entropy_loss(enc.logits, batch_labels);
        const double lv = loss->values[0];
        if (!std::isfinite(lv)) diverged("fine-tuning", lv, epoch, batches);
        opt.zero_grad();
        backward(loss);
        opt.step();
        loss_sum += lv;
        ++batches;
      }
      curve.push_back(loss_sum / std::max(1, batches));
    }

    std::vector<const ChannelStack*> val_ptrs;
    for (int idx : plan.fold_val[f]) val_ptrs.push_back(&inputs[idx]);
    std::vector<double> preds = predict_proba(params, val_ptrs, cfg.batch_size);
    for (std::size_t i = 0; i < val_ptrs.size(); ++i) {
      const int idx = plan.fold_val[f][i];
      if (res.oof_fold[idx] != -1)
        throw std::logic_error("finetune: fold plan predicts an index twice");
      res.oof[idx] = preds[i];
      res.oof_fold[idx] = f;
    }

    res.fold_models.push_back(std::move(params));
    res.fold_loss.push_back(std::move(curve));
  }

  for (int idx : plan.pool_indices)
    if (res.oof_fold[idx] == -1)
      throw std::logic_error("finetune: pool index never predicted out of fold");
  return res;
}

}  // namespace rndiff
