#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "rndiff/cohort.hpp"
#include "rndiff/preprocess.hpp"
#include "rndiff/volume.hpp"

namespace rndiff {

struct FeatureColumn {
  std::string name;
  std::string provenance;  // radiomic | clinical | model
};

/// Dense feature matrix keyed by lesion id. Selection operations drop
/// columns but never reorder or drop rows.
struct FeatureTable {
  std::vector<std::string> row_ids;
  std::vector<FeatureColumn> columns;
  std::vector<double> values;  // row-major

  int rows() const { return static_cast<int>(row_ids.size()); }
  int cols() const { return static_cast<int>(columns.size()); }
  double at(int r, int c) const {
    return values[static_cast<std::size_t>(r) * columns.size() + c];
  }
  double& at(int r, int c) {
    return values[static_cast<std::size_t>(r) * columns.size() + c];
  }
  int column_index(const std::string& name) const;
};

void check_feature_table(const FeatureTable& table);

using NamedFeatures = std::vector<std::pair<std::string, double>>;

/// 13 intensity statistics over mask-foreground voxels only. Degenerate
/// (constant) regions take variance-family values of 0 by convention.
NamedFeatures first_order(const Volume3D& image, const Volume3D& mask);

/// 6 geometry descriptors of the foreground: volume, exposed-face surface
/// area, sphericity, max pairwise surface distance, elongation, flatness.
/// Requires isotropic spacing.
NamedFeatures shape3d(const Volume3D& mask);

/// The 13 positive-halfspace unit offsets of the 26-neighborhood.
const std::vector<std::array<int, 3>>& glcm_directions();

/// Symmetrized, normalized co-occurrence matrix (bins x bins, row-major)
/// for one direction offset. Intensities are quantized to equal-width bins
/// over the masked range; a constant region collapses into bin 0.
std::vector<double> glcm_matrix(const Volume3D& image, const Volume3D& mask,
                                int bins, std::array<int, 3> offset);

/// 5 texture features averaged over all 13 directions (directions with no
/// co-occurring pair are skipped).
NamedFeatures glcm(const Volume3D& image, const Volume3D& mask, int bins = 32,
                   int distance = 1);

/// 24 radiomic columns (first_order + shape3d + glcm) plus the encoded
/// clinical columns, one row per sample. Per-sample failures are rethrown
/// with the lesion id prepended.
FeatureTable extract_all(const std::vector<CroppedSample>& samples,
                         const std::vector<ClinicalRecord>& clinical,
                         const std::vector<std::string>& ids,
                         const ClinicalVocabulary& vocab,
                         const ClinicalStats& stats, int glcm_bins = 32);

/// CSV (id + one column per feature, %.17g) with a JSON sidecar carrying
/// column provenance and any extra metadata supplied by the caller.
void write_feature_table(const FeatureTable& table, const std::string& csv_path,
                         const std::string& sidecar_path,
                         const std::string& extra_metadata_json = "{}");
FeatureTable read_feature_table(const std::string& csv_path,
                                const std::string& sidecar_path);

}  // namespace rndiff
