#include <benchmark/benchmark.h>

#include <cstdio>
#include <filesystem>
#include <vector>

#include "rndiff/featselect.hpp"
#include "rndiff/nifti.hpp"
#include "rndiff/radiomics.hpp"
#include "rndiff/rng.hpp"
#include "rndiff/tensor.hpp"
#include "rndiff/vit.hpp"

using namespace rndiff;

namespace {

std::vector<double> random_values(std::size_t n, SplitMix64& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

Volume3D random_volume(int side, SplitMix64& rng) {
  Volume3D vol;
  vol.dims = {side, side, side};
  vol.voxels = random_values(static_cast<std::size_t>(side) * side * side, rng);
  return vol;
}

Volume3D ball_mask(int side, double radius_frac) {
  Volume3D m;
  m.dims = {side, side, side};
  m.voxels.assign(static_cast<std::size_t>(side) * side * side, 0.0);
  const double c = (side - 1) / 2.0;
  const double r2 = radius_frac * side / 2.0 * radius_frac * side / 2.0;
  for (int z = 0; z < side; ++z)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        const double dx = x - c, dy = y - c, dz = z - c;
        if (dx * dx + dy * dy + dz * dz <= r2) m.at(x, y, z) = 1.0;
      }
  return m;
}

}  // namespace

static void MatmulBackward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  SplitMix64 rng(11);
  Tensor a = make_tensor({n, n}, random_values(static_cast<std::size_t>(n) * n, rng),
                         true);
  Tensor b = make_tensor({n, n}, random_values(static_cast<std::size_t>(n) * n, rng),
                         true);
  for (auto _ : state) {
    Tensor loss = mean_all(matmul(a, b));
    backward(loss);
    benchmark::DoNotOptimize(a->grad.data());
    a->grad.clear();
    b->grad.clear();
  }
  state.SetComplexityN(n);
}
BENCHMARK(MatmulBackward)->RangeMultiplier(2)->Range(32, 256)->Complexity();

static void VitForward(benchmark::State& state) {
  ViTConfig cfg;
  cfg.input_side = 32;
  cfg.patch_side = 8;
  cfg.embed_dim = 32;
  cfg.depth = 2;
  cfg.heads = 4;
  cfg.proj_dim = 16;
  SplitMix64 rng(5);
  const ViTParams params = init_vit_params(cfg, rng);
  const int batch = static_cast<int>(state.range(0));
  ChannelStack stack;
  stack.channels = cfg.in_channels;
  stack.dims = {cfg.input_side, cfg.input_side, cfg.input_side};
  stack.values = random_values(stack.voxel_count() * cfg.in_channels, rng);
  std::vector<const ChannelStack*> ptrs(batch, &stack);
  const Tensor patches = patchify_batch(ptrs, cfg);
  for (auto _ : state) {
    ViTOutput out = vit_forward(params, patches, false, nullptr, nullptr);
    benchmark::DoNotOptimize(out.logits->values.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(VitForward)->Arg(1)->Arg(4);

static void GlcmFeatures(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  SplitMix64 rng(7);
  const Volume3D image = random_volume(side, rng);
  const Volume3D mask = ball_mask(side, 0.8);
  for (auto _ : state) {
    NamedFeatures f = glcm(image, mask, 32);
    benchmark::DoNotOptimize(f);
  }
  state.SetComplexityN(side);
}
BENCHMARK(GlcmFeatures)->RangeMultiplier(2)->Range(16, 64)->Complexity();

static void LassoCvPath(benchmark::State& state) {
  const int n = 100;
  const int p = static_cast<int>(state.range(0));
  SplitMix64 rng(3);
  std::vector<double> X = random_values(static_cast<std::size_t>(n) * p, rng);
  std::vector<double> y(n);
  for (int i = 0; i < n; ++i)
    y[i] = X[static_cast<std::size_t>(i) * p] + 0.5 * rng.normal();
  for (auto _ : state) {
    LassoCvResult r = lasso_cv(X, n, p, y, 5, 50, 17);
    benchmark::DoNotOptimize(r.beta.data());
  }
  state.SetComplexityN(p);
}
BENCHMARK(LassoCvPath)->RangeMultiplier(2)->Range(16, 64)->Complexity();

static void NiftiRoundtrip(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  SplitMix64 rng(23);
  const Volume3D vol = random_volume(side, rng);
  const std::string path =
      (std::filesystem::temp_directory_path() / "rndiff_bench.nii").string();
  for (auto _ : state) {
    write_nifti(vol, kNiftiFloat64, path);
    Volume3D back = read_nifti(path);
    benchmark::DoNotOptimize(back.voxels.data());
  }
  std::remove(path.c_str());
  state.SetBytesProcessed(state.iterations() * static_cast<int64_t>(vol.size()) * 8);
}
BENCHMARK(NiftiRoundtrip)->Arg(32)->Arg(64);

BENCHMARK_MAIN();
