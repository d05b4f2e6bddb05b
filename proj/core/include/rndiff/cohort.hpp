#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rndiff/volume.hpp"

namespace rndiff {

enum class LesionClass : int { progression = 0, necrosis = 1 };

/// Non-imaging covariates carried per sample. Categorical fields are stored
/// as raw strings; encode_clinical() maps them to numeric features.
struct ClinicalRecord {
  double age = 0.0;
  std::string sex;        // "male" / "female"
  std::string primary;    // primary cancer site category
  std::string systemic;   // systemic treatment, "yes" / "no"
  double recurrence_days = 0.0;
};

/// One row of the cohort index with file paths resolved against the cohort
/// directory. Voxel data is loaded lazily via load_sample so a large cohort
/// never has to sit fully in memory.
struct CohortEntry {
  std::string id;
  std::optional<LesionClass> label;  // empty label field -> unlabeled
  ClinicalRecord clinical;
  std::string image_path;
  std::string mask_path;
};

struct LesionSample {
  std::string id;
  std::optional<LesionClass> label;
  ClinicalRecord clinical;
  Volume3D image;
  Volume3D mask;  // binary on load (>0 mapped to 1), same grid as image
};

/// Index file name inside a cohort directory.
inline constexpr const char* kCohortIndexName = "cohort.csv";

/// Reads dir/cohort.csv (header: id,label,age,sex,primary,systemic,
/// recurrence_days,image,mask). Does not touch the voxel files.
std::vector<CohortEntry> read_cohort_index(const std::string& dir);

/// Loads and validates one sample: both volumes must exist and share a grid;
/// the mask is binarized (>0 -> 1).
LesionSample load_sample(const CohortEntry& entry);

/// read_cohort_index + load_sample for every row, in index order.
std::vector<LesionSample> read_raw_cohort(const std::string& dir);

/// Writes dir/cohort.csv plus per-sample NIfTI files (float64 for images,
/// uint8 for masks) under dir/. Sample ids must be unique and filename-safe.
void write_raw_cohort(const std::string& dir,
                      const std::vector<LesionSample>& samples);

}  // namespace rndiff
