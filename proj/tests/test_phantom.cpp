#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "rndiff/cohort.hpp"
#include "rndiff/phantom.hpp"
#include "rndiff/preprocess.hpp"

using namespace rndiff;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
  fs::path d = fs::temp_directory_path() / (std::string("rndiff_phantom_") + tag);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

struct LesionStats {
  double rim_mean = 0.0;     // masked voxels in the outer radial band
  double core_mean = 0.0;    // masked voxels near the centroid
  double masked_mean = 0.0;
  int foreground = 0;
};

/// Mask-only geometry oracle: centroid + effective ball radius locate the rim
/// band without any generator internals.
LesionStats lesion_stats(const LesionSample& s) {
  LesionStats st;
  double cx = 0, cy = 0, cz = 0;
  const auto& m = s.mask;
  for (int z = 0; z < m.dims[2]; ++z)
    for (int y = 0; y < m.dims[1]; ++y)
      for (int x = 0; x < m.dims[0]; ++x)
        if (m.at(x, y, z) > 0) {
          cx += x;
          cy += y;
          cz += z;
          ++st.foreground;
        }
  REQUIRE(st.foreground > 0);
  cx /= st.foreground;
  cy /= st.foreground;
  cz /= st.foreground;
  const double r_eff =
      std::cbrt(3.0 * st.foreground / (4.0 * 3.14159265358979323846));
  double rim_sum = 0, core_sum = 0, all_sum = 0;
  int rim_n = 0, core_n = 0;
  for (int z = 0; z < m.dims[2]; ++z)
    for (int y = 0; y < m.dims[1]; ++y)
      for (int x = 0; x < m.dims[0]; ++x) {
        if (m.at(x, y, z) <= 0) continue;
        const double d = std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy) +
                                   (z - cz) * (z - cz));
        const double v = s.image.at(x, y, z);
        all_sum += v;
        if (d >= 0.8 * r_eff) {
          rim_sum += v;
          ++rim_n;
        } else if (d <= 0.5 * r_eff) {
          core_sum += v;
          ++core_n;
        }
      }
  st.rim_mean = rim_n ? rim_sum / rim_n : 0.0;
  st.core_mean = core_n ? core_sum / core_n : 0.0;
  st.masked_mean = all_sum / st.foreground;
  return st;
}

}  // namespace

TEST_CASE("necrosis lesions have a darker interior than rim at zero noise") {
  SplitMix64 rng(42);
  PhantomLesion lesion = generate_lesion(LesionClass::necrosis, 32, 0.0, rng);
  LesionStats st = lesion_stats(lesion.sample);
  CHECK(st.core_mean < st.rim_mean);
  CHECK(st.rim_mean > 0.6);   // bright enhancing shell
  CHECK(st.core_mean < 0.4);  // hypointense center
}

TEST_CASE("masks are non-empty and below half the volume for both classes") {
  for (LesionClass cls : {LesionClass::progression, LesionClass::necrosis}) {
    for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
      SplitMix64 rng(seed);
      PhantomLesion lesion = generate_lesion(cls, 32, 0.0, rng);
      int fg = 0;
      for (double v : lesion.sample.mask.voxels) fg += v > 0 ? 1 : 0;
      CHECK(fg > 0);
      CHECK(fg < 32 * 32 * 32 / 2);
    }
  }
}

TEST_CASE("generation is deterministic and never emits non-finite voxels") {
  SplitMix64 a(7), b(7);
  PhantomLesion la = generate_lesion(LesionClass::progression, 32, 0.5, a);
  PhantomLesion lb = generate_lesion(LesionClass::progression, 32, 0.5, b);
  CHECK(la.sample.image.voxels == lb.sample.image.voxels);
  CHECK(la.sample.mask.voxels == lb.sample.mask.voxels);
  CHECK(la.distractor == lb.distractor);
  for (double v : la.sample.image.voxels) CHECK(std::isfinite(v));
}

TEST_CASE("nearest-centroid on masked mean and ring contrast separates the classes") {
  // Learnability floor: 200 lesions at noise 0.3, two hand features, one
  // centroid per class, >= 0.9 accuracy.
  const int n_per_class = 100;
  std::vector<std::array<double, 2>> feats;
  std::vector<int> labels;
  std::uint64_t stream = 0;
  for (int cls = 0; cls < 2; ++cls)
    for (int i = 0; i < n_per_class; ++i) {
      SplitMix64 rng = SplitMix64::derive(123456, stream++);
      PhantomLesion lesion = generate_lesion(
          cls ? LesionClass::necrosis : LesionClass::progression, 32, 0.3, rng);
      LesionStats st = lesion_stats(lesion.sample);
      feats.push_back({st.masked_mean, st.rim_mean - st.core_mean});
      labels.push_back(cls);
    }
  std::array<double, 2> mu0{0, 0}, mu1{0, 0};
  for (std::size_t i = 0; i < feats.size(); ++i) {
    auto& mu = labels[i] ? mu1 : mu0;
    mu[0] += feats[i][0] / n_per_class;
    mu[1] += feats[i][1] / n_per_class;
  }
  int correct = 0;
  for (std::size_t i = 0; i < feats.size(); ++i) {
    const double d0 = std::hypot(feats[i][0] - mu0[0], feats[i][1] - mu0[1]);
    const double d1 = std::hypot(feats[i][0] - mu1[0], feats[i][1] - mu1[1]);
    correct += ((d1 < d0) == (labels[i] == 1)) ? 1 : 0;
  }
  CHECK(correct >= 180);
}

TEST_CASE("generate_phantom_cohort writes both sets with exact label balance") {
  auto dir = temp_dir("cohort");
  PhantomSpec spec;
  spec.n_unlabeled = 6;
  spec.n_labeled = 40;
  spec.class_balance = 0.34;
  spec.volume_side = 16;
  spec.noise_sigma = 0.2;
  spec.seed = 99;
  generate_phantom_cohort(spec, dir.string());

  auto labeled = read_cohort_index((dir / "labeled").string());
  REQUIRE(labeled.size() == 40);
  int necro = 0;
  for (const auto& e : labeled) {
    REQUIRE(e.label.has_value());
    necro += *e.label == LesionClass::necrosis ? 1 : 0;
  }
  CHECK(necro == 14);  // round(0.34 * 40)

  auto unlabeled = read_cohort_index((dir / "unlabeled").string());
  REQUIRE(unlabeled.size() == 6);
  for (const auto& e : unlabeled) CHECK(!e.label.has_value());

  // Every listed file loads and validates.
  for (const auto& e : unlabeled) validate_sample(load_sample(e));
  validate_sample(load_sample(labeled[0]));

  // Regeneration is byte-identical.
  auto dir2 = temp_dir("cohort2");
  generate_phantom_cohort(spec, dir2.string());
  CHECK(slurp(dir / "labeled" / "cohort.csv") == slurp(dir2 / "labeled" / "cohort.csv"));
  CHECK(slurp(dir / "unlabeled" / "cohort.csv") ==
        slurp(dir2 / "unlabeled" / "cohort.csv"));
  CHECK(slurp(dir / "labeled" / "l0007_img.nii") ==
        slurp(dir2 / "labeled" / "l0007_img.nii"));

  // Provenance carries per-sample latent class and distractor flags.
  auto prov = nlohmann::json::parse(slurp(dir / "labeled" / "provenance.json"));
  REQUIRE(prov.at("samples").size() == 40);
  CHECK(prov.at("samples")[0].contains("distractor"));
  CHECK(prov.at("samples")[0].contains("class"));
  auto spec_js = nlohmann::json::parse(slurp(dir / "phantom_spec.json"));
  CHECK(spec_js.at("seed").get<std::uint64_t>() == 99);
}

TEST_CASE("recurrence time correlates with class across a large sample") {
  // The designed weak clinical signal: necrosis recurrence_days distribution
  // sits above progression (pairwise win rate near 0.70).
  std::vector<double> prog, necro;
  std::uint64_t stream = 0;
  for (int i = 0; i < 300; ++i) {
    SplitMix64 rng = SplitMix64::derive(777, stream++);
    PhantomLesion l = generate_lesion(
        i % 2 ? LesionClass::necrosis : LesionClass::progression, 16, 0.1, rng);
    (i % 2 ? necro : prog).push_back(l.sample.clinical.recurrence_days);
  }
  double wins = 0;
  for (double a : necro)
    for (double b : prog) wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  const double auc = wins / (necro.size() * prog.size());
  CHECK(auc > 0.6);
  CHECK(auc < 0.8);
}
