#pragma once

#include <array>
#include <ostream>
#include <string>
#include <vector>

#include "rndiff/cohort.hpp"
#include "rndiff/volume.hpp"

namespace rndiff {

/// Reorders/flips voxel axes so the orientation becomes (+L,+P,+S).
/// Value multiset is preserved exactly; idempotent on LPS input.
Volume3D reorient_lps(const Volume3D& vol);

enum class ResampleMode { trilinear, nearest };

/// Resamples onto an isotropic grid of the given spacing. Output dims are
/// round(dim*spacing/target), at least 1 per axis. The corner voxel center
/// stays fixed, so the origin is unchanged. Samples past the edge clamp.
Volume3D resample_isotropic(const Volume3D& vol, double target_mm, ResampleMode mode);

/// Cube [center - side/2, center + side/2) per axis, zero-padded where it
/// leaves the volume. Requires isotropic spacing (mm crop == voxel crop) and
/// the center inside the volume.
Volume3D crop_subvolume(const Volume3D& vol, std::array<int, 3> center, int side);

/// Shifts/scales to mean 0 and population standard deviation 1. Errors on a
/// constant volume.
Volume3D zscore(const Volume3D& vol);

/// Identity hooks for steps the upstream tooling owns. Each returns its input
/// untouched and notes the skip on the log stream when one is given.
Volume3D bias_field_correct(const Volume3D& vol, std::ostream* log = nullptr);
Volume3D register_to_atlas(const Volume3D& vol, std::ostream* log = nullptr);
Volume3D skull_strip(const Volume3D& vol, std::ostream* log = nullptr);

/// Channel-major model input: values[c * nvox + v] with voxels x-fastest.
struct ChannelStack {
  int channels = 0;
  std::array<int, 3> dims{0, 0, 0};
  std::vector<double> values;

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  double at(int c, int x, int y, int z) const {
    return values[static_cast<std::size_t>(c) * voxel_count() +
                  (static_cast<std::size_t>(x) +
                   static_cast<std::size_t>(dims[0]) *
                       (static_cast<std::size_t>(y) +
                        static_cast<std::size_t>(dims[1]) * z))];
  }
};

/// Two-channel stack: channel 0 image, channel 1 mask. Grids must match and
/// the mask must be binary.
ChannelStack assemble_channels(const Volume3D& image, const Volume3D& mask);

/// Single-channel stack for the image-only ablation (no placeholder channel).
ChannelStack assemble_channels(const Volume3D& image);

struct PreprocessOptions {
  double target_spacing_mm = 1.0;
  int crop_side = 64;
};

/// Model-ready crops: LPS orientation, isotropic spacing, cube crop centered
/// on the mask centroid, image z-scored over the crop, mask kept binary.
struct CroppedSample {
  Volume3D image;
  Volume3D mask;
};

CroppedSample preprocess_sample(const LesionSample& sample, const PreprocessOptions& opt);

/// Category lists for the clinical one-hot encoding, in declared order.
struct ClinicalVocabulary {
  std::vector<std::string> sex;
  std::vector<std::string> primary;
  std::vector<std::string> systemic;
};

ClinicalVocabulary default_clinical_vocabulary();

/// Continuous-field statistics of the training cohort, reused verbatim when
/// encoding validation/test records.
struct ClinicalStats {
  double age_mean = 0.0;
  double age_sigma = 1.0;
  double recurrence_mean = 0.0;
  double recurrence_sigma = 1.0;
};

/// Population mean/sigma of age and recurrence_days. Errors when a field is
/// constant (a degenerate training cohort).
ClinicalStats compute_clinical_stats(const std::vector<ClinicalRecord>& training);

/// Layout: [age, sex one-hot, primary one-hot, systemic one-hot,
/// recurrence_days], continuous fields standardized with the training stats.
/// A category missing from the vocabulary is an error.
std::vector<double> encode_clinical(const ClinicalRecord& rec,
                                    const ClinicalVocabulary& vocab,
                                    const ClinicalStats& stats);

/// Column names matching encode_clinical's layout, e.g. "sex=female".
std::vector<std::string> clinical_feature_names(const ClinicalVocabulary& vocab);

/// Enforces the sample invariants: shared grid, binary mask with at least one
/// foreground voxel, age > 0, recurrence_days >= 0.
void validate_sample(const LesionSample& sample);

}  // namespace rndiff
