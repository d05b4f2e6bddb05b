#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <vector>

#include "doctest.h"
#include "rndiff/radiomics.hpp"
#include "rndiff/rng.hpp"

using namespace rndiff;

namespace {

std::map<std::string, double> as_map(const NamedFeatures& f) {
  return std::map<std::string, double>(f.begin(), f.end());
}

Volume3D cube(int side, double fill = 0.0, double spacing = 1.0) {
  Volume3D v = Volume3D::zeros({side, side, side}, {spacing, spacing, spacing});
  if (fill != 0.0) std::fill(v.voxels.begin(), v.voxels.end(), fill);
  return v;
}

}  // namespace

TEST_CASE("first_order matches hand-computed statistics") {
  Volume3D img = cube(4);
  Volume3D msk = cube(4);

  SUBCASE("two-voxel region {0,2}") {
    img.at(1, 1, 1) = 0.0;
    img.at(2, 1, 1) = 2.0;
    msk.at(1, 1, 1) = 1.0;
    msk.at(2, 1, 1) = 1.0;
    auto f = as_map(first_order(img, msk));
    CHECK(f["fo_mean"] == 1.0);
    CHECK(f["fo_variance"] == 1.0);  // population
    CHECK(f["fo_range"] == 2.0);
    CHECK(f["fo_median"] == 1.0);
    CHECK(f["fo_minimum"] == 0.0);
    CHECK(f["fo_maximum"] == 2.0);
    CHECK(f["fo_energy"] == 4.0);
    CHECK(f["fo_skewness"] == 0.0);
    CHECK(f["fo_kurtosis"] == -2.0);  // Fisher, two-point distribution
    CHECK(f["fo_p10"] == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(f["fo_p90"] == doctest::Approx(1.8).epsilon(1e-12));
    CHECK(f["fo_iqr"] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(f["fo_entropy"] == doctest::Approx(1.0).epsilon(1e-12));  // two bins
  }

  SUBCASE("constant region degenerates cleanly") {
    for (int i = 0; i < 3; ++i) {
      img.at(i, 0, 0) = 7.25;
      msk.at(i, 0, 0) = 1.0;
    }
    auto f = as_map(first_order(img, msk));
    CHECK(f["fo_mean"] == 7.25);
    CHECK(f["fo_variance"] == 0.0);
    CHECK(f["fo_entropy"] == 0.0);
    CHECK(f["fo_skewness"] == 0.0);
    CHECK(f["fo_kurtosis"] == 0.0);
    CHECK(f["fo_range"] == 0.0);
    CHECK(f["fo_iqr"] == 0.0);
  }

  SUBCASE("32 equally populated bins reach maximum entropy") {
    Volume3D img32 = cube(8);
    Volume3D msk32 = cube(8);
    for (int k = 0; k < 32; ++k) {
      img32.voxels[k] = static_cast<double>(k);
      msk32.voxels[k] = 1.0;
    }
    auto f = as_map(first_order(img32, msk32));
    CHECK(f["fo_entropy"] == doctest::Approx(5.0).epsilon(1e-12));
  }

  SUBCASE("mask locality: outside voxels are invisible") {
    img.at(1, 1, 1) = 3.0;
    msk.at(1, 1, 1) = 1.0;
    img.at(2, 1, 1) = 1.5;
    msk.at(2, 1, 1) = 1.0;
    NamedFeatures before = first_order(img, msk);
    img.at(0, 0, 0) = 1e9;
    img.at(3, 3, 3) = -1e9;
    CHECK(first_order(img, msk) == before);
  }

  SUBCASE("empty mask raises") {
    CHECK_THROWS_WITH_AS(first_order(img, msk), doctest::Contains("empty"),
                         std::invalid_argument);
  }
}

TEST_CASE("shape3d closed-form oracles") {
  SUBCASE("single voxel") {
    Volume3D msk = cube(3);
    msk.at(1, 1, 1) = 1.0;
    auto f = as_map(shape3d(msk));
    CHECK(f["shape_volume"] == 1.0);
    CHECK(f["shape_surface_area"] == 6.0);
    const double expect = std::cbrt(M_PI) * std::pow(6.0, 2.0 / 3.0) / 6.0;
    CHECK(f["shape_sphericity"] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(expect == doctest::Approx(0.80600).epsilon(1e-4));
    CHECK(f["shape_max_diameter"] == 0.0);
    CHECK(f["shape_elongation"] == 1.0);
    CHECK(f["shape_flatness"] == 1.0);
  }

  SUBCASE("2x1x1 bar") {
    Volume3D msk = cube(4);
    msk.at(1, 1, 1) = 1.0;
    msk.at(2, 1, 1) = 1.0;
    auto f = as_map(shape3d(msk));
    CHECK(f["shape_volume"] == 2.0);
    CHECK(f["shape_surface_area"] == 10.0);
    CHECK(f["shape_max_diameter"] == 1.0);  // center to center
    CHECK(f["shape_elongation"] == 0.0);    // zero thickness off-axis
    CHECK(f["shape_flatness"] == 0.0);
  }

  SUBCASE("spacing scales volume, area, diameter") {
    Volume3D msk = cube(4, 0.0, 2.0);
    msk.at(1, 1, 1) = 1.0;
    msk.at(2, 1, 1) = 1.0;
    auto f = as_map(shape3d(msk));
    CHECK(f["shape_volume"] == 16.0);
    CHECK(f["shape_surface_area"] == 40.0);
    CHECK(f["shape_max_diameter"] == 2.0);
  }

  SUBCASE("digital ball approaches the analytic ball") {
    Volume3D msk = cube(16);
    for (int z = 0; z < 16; ++z)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
          const double dx = x - 7.5, dy = y - 7.5, dz = z - 7.5;
          if (dx * dx + dy * dy + dz * dz <= 25.0) msk.at(x, y, z) = 1.0;
        }
    auto f = as_map(shape3d(msk));
    const double analytic = 4.0 / 3.0 * M_PI * 125.0;
    CHECK(f["shape_volume"] > 0.9 * analytic);
    CHECK(f["shape_volume"] < 1.1 * analytic);
    CHECK(f["shape_sphericity"] < 1.0);  // voxel surface exceeds the smooth one
    CHECK(f["shape_sphericity"] > 0.5);
    CHECK(f["shape_elongation"] > 0.95);
    CHECK(f["shape_flatness"] > 0.95);

    // Axis permutation leaves every descriptor unchanged.
    Volume3D perm = cube(16);
    for (int z = 0; z < 16; ++z)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) perm.at(z, x, y) = msk.at(x, y, z);
    NamedFeatures a = shape3d(msk), b = shape3d(perm);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(b[i].first == a[i].first);
      CHECK(b[i].second == doctest::Approx(a[i].second).epsilon(1e-9));
    }
  }

  SUBCASE("anisotropic spacing rejected") {
    Volume3D msk = Volume3D::zeros({4, 4, 4}, {1.0, 1.0, 2.0});
    msk.at(1, 1, 1) = 1.0;
    CHECK_THROWS_WITH_AS(shape3d(msk), doctest::Contains("isotropic"),
                         std::invalid_argument);
  }
}

TEST_CASE("glcm matrices and direction-averaged features") {
  CHECK(glcm_directions().size() == 13u);

  SUBCASE("constant region: single cell at (0,0)") {
    Volume3D img = cube(3, 4.0);
    Volume3D msk = cube(3, 1.0);
    auto f = as_map(glcm(img, msk));
    CHECK(f["glcm_joint_energy"] == 1.0);
    CHECK(f["glcm_contrast"] == 0.0);
    CHECK(f["glcm_joint_entropy"] == 0.0);
    CHECK(f["glcm_homogeneity"] == 1.0);
    CHECK(f["glcm_correlation"] == 1.0);  // degenerate-variance convention
  }

  SUBCASE("checkerboard along x: single-direction contrast is (delta bin)^2") {
    Volume3D img = cube(4);
    Volume3D msk = cube(4, 1.0);
    for (int z = 0; z < 4; ++z)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) img.at(x, y, z) = (x % 2 == 0) ? 0.0 : 1.0;
    std::vector<double> m = glcm_matrix(img, msk, 32, {1, 0, 0});
    double total = 0.0;
    for (double v : m) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m[0 * 32 + 31] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(m[31 * 32 + 0] == doctest::Approx(0.5).epsilon(1e-12));
    double contrast = 0.0;
    for (int i = 0; i < 32; ++i)
      for (int j = 0; j < 32; ++j)
        contrast += m[static_cast<std::size_t>(i) * 32 + j] * (i - j) * (i - j);
    CHECK(contrast == doctest::Approx(961.0).epsilon(1e-12));
  }

  SUBCASE("global shift preserving bins leaves features unchanged") {
    SplitMix64 rng(2);
    Volume3D img = cube(6);
    Volume3D msk = cube(6, 1.0);
    for (double& v : img.voxels) v = rng.uniform(0.0, 10.0);
    NamedFeatures before = glcm(img, msk);
    for (double& v : img.voxels) v += 123.5;
    NamedFeatures after = glcm(img, msk);
    for (std::size_t i = 0; i < before.size(); ++i)
      CHECK(after[i].second == doctest::Approx(before[i].second).epsilon(1e-9));
  }

  SUBCASE("single voxel is degenerate") {
    Volume3D img = cube(3);
    Volume3D msk = cube(3);
    msk.at(1, 1, 1) = 1.0;
    CHECK_THROWS_WITH_AS(glcm(img, msk), doctest::Contains("degenerate"),
                         std::invalid_argument);
  }
}

TEST_CASE("extract_all assembles a stable schema with clinical columns") {
  SplitMix64 rng(8);
  std::vector<CroppedSample> samples;
  std::vector<ClinicalRecord> clinical;
  std::vector<std::string> ids;
  for (int i = 0; i < 3; ++i) {
    CroppedSample s{cube(6), cube(6)};
    for (double& v : s.image.voxels) v = rng.normal();
    for (int z = 2; z < 5; ++z)
      for (int y = 2; y < 5; ++y)
        for (int x = 2; x < 5; ++x) s.mask.at(x, y, z) = 1.0;
    samples.push_back(std::move(s));
    ClinicalRecord rec;
    rec.age = 50.0 + i;
    rec.sex = "female";
    rec.primary = "NSCLC";
    rec.systemic = i % 2 ? "yes" : "no";
    rec.recurrence_days = 120.0 + 10.0 * i;
    clinical.push_back(rec);
    ids.push_back("s" + std::to_string(i));
  }
  // Identical lesions must produce identical rows.
  samples[2] = samples[0];
  clinical[2] = clinical[0];

  ClinicalVocabulary vocab = default_clinical_vocabulary();
  ClinicalStats stats = compute_clinical_stats(clinical);
  FeatureTable table = extract_all(samples, clinical, ids, vocab, stats);

  CHECK(table.rows() == 3);
  CHECK(table.cols() == 24 + 12);
  int radiomic = 0, clinical_cols = 0;
  for (const auto& col : table.columns) {
    if (col.provenance == "radiomic") ++radiomic;
    if (col.provenance == "clinical") ++clinical_cols;
  }
  CHECK(radiomic == 24);
  CHECK(clinical_cols == 12);
  CHECK(table.columns[0].name == "fo_mean");
  CHECK(table.column_index("glcm_joint_entropy") == 23);
  for (int c = 0; c < table.cols(); ++c)
    CHECK(table.at(2, c) == table.at(0, c));

  // Per-sample failures carry the lesion id.
  std::vector<CroppedSample> bad = samples;
  for (double& v : bad[1].mask.voxels) v = 0.0;
  CHECK_THROWS_WITH_AS(extract_all(bad, clinical, ids, vocab, stats),
                       doctest::Contains("s1"), std::runtime_error);

  // CSV + sidecar round-trip is exact.
  namespace fs = std::filesystem;
  const std::string csv = (fs::temp_directory_path() / "rndiff_feats.csv").string();
  const std::string side = (fs::temp_directory_path() / "rndiff_feats.json").string();
  write_feature_table(table, csv, side, "{\"glcm_bins\":32}");
  FeatureTable back = read_feature_table(csv, side);
  CHECK(back.row_ids == table.row_ids);
  CHECK(back.values == table.values);
  REQUIRE(back.cols() == table.cols());
  for (int c = 0; c < table.cols(); ++c) {
    CHECK(back.columns[c].name == table.columns[c].name);
    CHECK(back.columns[c].provenance == table.columns[c].provenance);
  }
}
