#include "rndiff/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>

namespace rndiff {
namespace {

double clampd(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

bool is_binary(const Volume3D& v) {
  for (double x : v.voxels)
    if (x != 0.0 && x != 1.0) return false;
  return true;
}

}  // namespace

Volume3D reorient_lps(const Volume3D& vol) {
  check_volume(vol);
  if (vol.orientation == kLpsOrientation) return vol;

  // axis_from[a]: which input axis runs along output LPS axis a; flip[a]:
  // whether it runs in the negative anatomical direction.
  std::array<int, 3> axis_from{};
  std::array<bool, 3> flip{};
  for (int a = 0; a < 3; ++a) {
    for (int i = 0; i < 3; ++i) {
      if (std::abs(vol.orientation[i]) == a + 1) {
        axis_from[a] = i;
        flip[a] = vol.orientation[i] < 0;
      }
    }
  }

  Volume3D out;
  for (int a = 0; a < 3; ++a) {
    out.dims[a] = vol.dims[axis_from[a]];
    out.spacing[a] = vol.spacing[axis_from[a]];
  }
  out.orientation = kLpsOrientation;

  // New voxel (0,0,0) sits at the input corner the flips select.
  std::array<int, 3> corner{0, 0, 0};
  for (int a = 0; a < 3; ++a)
    if (flip[a]) corner[axis_from[a]] = vol.dims[axis_from[a]] - 1;
  out.origin = voxel_position(vol, corner);

  out.voxels.resize(vol.voxels.size());
  std::array<int, 3> in{};
  for (int z = 0; z < out.dims[2]; ++z)
    for (int y = 0; y < out.dims[1]; ++y)
      for (int x = 0; x < out.dims[0]; ++x) {
        const std::array<int, 3> o{x, y, z};
        for (int a = 0; a < 3; ++a)
          in[axis_from[a]] = flip[a] ? vol.dims[axis_from[a]] - 1 - o[a] : o[a];
        out.at(x, y, z) = vol.at(in[0], in[1], in[2]);
      }
  return out;
}

Volume3D resample_isotropic(const Volume3D& vol, double target_mm, ResampleMode mode) {
  check_volume(vol);
  if (!(target_mm > 0.0))
    throw std::invalid_argument("resample_isotropic: target spacing must be positive");
  if (vol.spacing == std::array<double, 3>{target_mm, target_mm, target_mm}) return vol;

  Volume3D out;
  out.orientation = vol.orientation;
  out.origin = vol.origin;
  out.spacing = {target_mm, target_mm, target_mm};
  for (int i = 0; i < 3; ++i) {
    out.dims[i] = std::max(
        1, static_cast<int>(std::llround(vol.dims[i] * vol.spacing[i] / target_mm)));
  }
  out.voxels.resize(static_cast<std::size_t>(out.dims[0]) * out.dims[1] * out.dims[2]);

  for (int z = 0; z < out.dims[2]; ++z)
    for (int y = 0; y < out.dims[1]; ++y)
      for (int x = 0; x < out.dims[0]; ++x) {
        // Continuous source coordinate of this output voxel center, clamped
        // to the grid so edge samples repeat the border value.
        std::array<double, 3> u;
        const std::array<int, 3> o{x, y, z};
        for (int i = 0; i < 3; ++i)
          u[i] = clampd(o[i] * target_mm / vol.spacing[i], 0.0, vol.dims[i] - 1.0);

        if (mode == ResampleMode::nearest) {
          out.at(x, y, z) = vol.at(static_cast<int>(std::llround(u[0])),
                                   static_cast<int>(std::llround(u[1])),
                                   static_cast<int>(std::llround(u[2])));
          continue;
        }

        std::array<int, 3> i0, i1;
        std::array<double, 3> f;
        for (int i = 0; i < 3; ++i) {
          i0[i] = static_cast<int>(std::floor(u[i]));
          i1[i] = std::min(i0[i] + 1, vol.dims[i] - 1);
          f[i] = u[i] - i0[i];
        }
        double acc = 0.0;
        for (int c = 0; c < 8; ++c) {
          const int cx = (c & 1) ? i1[0] : i0[0];
          const int cy = (c & 2) ? i1[1] : i0[1];
          const int cz = (c & 4) ? i1[2] : i0[2];
          const double w = ((c & 1) ? f[0] : 1.0 - f[0]) *
                           ((c & 2) ? f[1] : 1.0 - f[1]) *
                           ((c & 4) ? f[2] : 1.0 - f[2]);
          acc += w * vol.at(cx, cy, cz);
        }
        out.at(x, y, z) = acc;
      }
  return out;
}

Volume3D crop_subvolume(const Volume3D& vol, std::array<int, 3> center, int side) {
  check_volume(vol);
  if (side <= 0) throw std::invalid_argument("crop_subvolume: side must be positive");
  for (int i = 0; i < 3; ++i)
    if (std::abs(vol.spacing[i] - vol.spacing[0]) > 1e-9)
      throw std::invalid_argument("crop_subvolume: spacing must be isotropic");
  if (!vol.in_bounds(center[0], center[1], center[2]))
    throw std::invalid_argument("crop_subvolume: center outside volume");

  std::array<int, 3> lo;
  for (int i = 0; i < 3; ++i) lo[i] = center[i] - side / 2;

  Volume3D out;
  out.dims = {side, side, side};
  out.spacing = vol.spacing;
  out.orientation = vol.orientation;
  out.origin = voxel_position(vol, lo);
  out.voxels.assign(static_cast<std::size_t>(side) * side * side, 0.0);
  for (int z = 0; z < side; ++z)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        const int sx = lo[0] + x, sy = lo[1] + y, sz = lo[2] + z;
        if (vol.in_bounds(sx, sy, sz)) out.at(x, y, z) = vol.at(sx, sy, sz);
      }
  return out;
}

Volume3D zscore(const Volume3D& vol) {
  check_volume(vol);
  const double n = static_cast<double>(vol.voxels.size());
  double mean = 0.0;
  for (double v : vol.voxels) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : vol.voxels) var += (v - mean) * (v - mean);
  var /= n;  // population variance: the normalized volume then has sd exactly 1
  if (var == 0.0)
    throw std::invalid_argument("zscore: constant volume has no spread to normalize");
  const double inv_sd = 1.0 / std::sqrt(var);

  Volume3D out = vol;
  for (double& v : out.voxels) v = (v - mean) * inv_sd;
  return out;
}

Volume3D bias_field_correct(const Volume3D& vol, std::ostream* log) {
  if (log) *log << "bias-field correction: identity pass-through (handled by upstream tooling)\n";
  return vol;
}

Volume3D register_to_atlas(const Volume3D& vol, std::ostream* log) {
  if (log) *log << "atlas registration: identity pass-through (handled by upstream tooling)\n";
  return vol;
}

Volume3D skull_strip(const Volume3D& vol, std::ostream* log) {
  if (log) *log << "skull stripping: identity pass-through (handled by upstream tooling)\n";
  return vol;
}

ChannelStack assemble_channels(const Volume3D& image, const Volume3D& mask) {
  check_volume(image);
  check_volume(mask);
  if (!same_grid(image, mask))
    throw std::invalid_argument("assemble_channels: image/mask grid mismatch");
  if (!is_binary(mask))
    throw std::invalid_argument("assemble_channels: mask must be binary");
  ChannelStack s;
  s.channels = 2;
  s.dims = image.dims;
  s.values.reserve(2 * image.voxels.size());
  s.values.insert(s.values.end(), image.voxels.begin(), image.voxels.end());
  s.values.insert(s.values.end(), mask.voxels.begin(), mask.voxels.end());
  return s;
}

ChannelStack assemble_channels(const Volume3D& image) {
  check_volume(image);
  ChannelStack s;
  s.channels = 1;
  s.dims = image.dims;
  s.values = image.voxels;
  return s;
}

CroppedSample preprocess_sample(const LesionSample& sample, const PreprocessOptions& opt) {
  Volume3D image = reorient_lps(sample.image);
  Volume3D mask = reorient_lps(sample.mask);
  image = resample_isotropic(image, opt.target_spacing_mm, ResampleMode::trilinear);
  mask = resample_isotropic(mask, opt.target_spacing_mm, ResampleMode::nearest);

  double cx = 0.0, cy = 0.0, cz = 0.0, count = 0.0;
  for (int z = 0; z < mask.dims[2]; ++z)
    for (int y = 0; y < mask.dims[1]; ++y)
      for (int x = 0; x < mask.dims[0]; ++x)
        if (mask.at(x, y, z) > 0.0) {
          cx += x;
          cy += y;
          cz += z;
          count += 1.0;
        }
  if (count == 0.0)
    throw std::runtime_error("preprocess_sample: mask is empty after resampling, sample " +
                             sample.id);
  const std::array<int, 3> center{static_cast<int>(std::llround(cx / count)),
                                  static_cast<int>(std::llround(cy / count)),
                                  static_cast<int>(std::llround(cz / count))};

  CroppedSample out;
  out.image = zscore(crop_subvolume(image, center, opt.crop_side));
  out.mask = crop_subvolume(mask, center, opt.crop_side);
  return out;
}

ClinicalVocabulary default_clinical_vocabulary() {
  return ClinicalVocabulary{
      {"male", "female"},
      {"NSCLC", "breast", "melanoma", "SCLC", "ovary", "other"},
      {"yes", "no"},
  };
}

ClinicalStats compute_clinical_stats(const std::vector<ClinicalRecord>& training) {
  if (training.empty())
    throw std::invalid_argument("compute_clinical_stats: empty training cohort");
  const double n = static_cast<double>(training.size());
  ClinicalStats st;
  st.age_mean = st.recurrence_mean = 0.0;
  for (const auto& r : training) {
    st.age_mean += r.age;
    st.recurrence_mean += r.recurrence_days;
  }
  st.age_mean /= n;
  st.recurrence_mean /= n;
  double va = 0.0, vr = 0.0;
  for (const auto& r : training) {
    va += (r.age - st.age_mean) * (r.age - st.age_mean);
    vr += (r.recurrence_days - st.recurrence_mean) * (r.recurrence_days - st.recurrence_mean);
  }
  st.age_sigma = std::sqrt(va / n);
  st.recurrence_sigma = std::sqrt(vr / n);
  if (st.age_sigma == 0.0 || st.recurrence_sigma == 0.0)
    throw std::invalid_argument(
        "compute_clinical_stats: constant continuous field in training cohort");
  return st;
}

namespace {

void append_onehot(std::vector<double>& out, const std::string& value,
                   const std::vector<std::string>& vocab, const char* field) {
  auto it = std::find(vocab.begin(), vocab.end(), value);
  if (it == vocab.end())
    throw std::invalid_argument(std::string("encode_clinical: unknown category '") + value +
                                "' for field " + field);
  for (std::size_t i = 0; i < vocab.size(); ++i)
    out.push_back(it - vocab.begin() == static_cast<std::ptrdiff_t>(i) ? 1.0 : 0.0);
}

}  // namespace

std::vector<double> encode_clinical(const ClinicalRecord& rec, const ClinicalVocabulary& vocab,
                                    const ClinicalStats& stats) {
  std::vector<double> out;
  out.reserve(2 + vocab.sex.size() + vocab.primary.size() + vocab.systemic.size());
  out.push_back((rec.age - stats.age_mean) / stats.age_sigma);
  append_onehot(out, rec.sex, vocab.sex, "sex");
  append_onehot(out, rec.primary, vocab.primary, "primary");
  append_onehot(out, rec.systemic, vocab.systemic, "systemic");
  out.push_back((rec.recurrence_days - stats.recurrence_mean) / stats.recurrence_sigma);
  return out;
}

std::vector<std::string> clinical_feature_names(const ClinicalVocabulary& vocab) {
  std::vector<std::string> names;
  names.push_back("age");
  for (const auto& v : vocab.sex) names.push_back("sex=" + v);
  for (const auto& v : vocab.primary) names.push_back("primary=" + v);
  for (const auto& v : vocab.systemic) names.push_back("systemic=" + v);
  names.push_back("recurrence_days");
  return names;
}

void validate_sample(const LesionSample& sample) {
  check_volume(sample.image);
  check_volume(sample.mask);
  if (!same_grid(sample.image, sample.mask))
    throw std::invalid_argument("sample " + sample.id + ": image/mask grid mismatch");
  if (!is_binary(sample.mask))
    throw std::invalid_argument("sample " + sample.id + ": mask is not binary");
  bool any = false;
  for (double v : sample.mask.voxels)
    if (v > 0.0) {
      any = true;
      break;
    }
  if (!any) throw std::invalid_argument("sample " + sample.id + ": mask has no foreground");
  if (!(sample.clinical.age > 0.0))
    throw std::invalid_argument("sample " + sample.id + ": age must be positive");
  if (sample.clinical.recurrence_days < 0.0)
    throw std::invalid_argument("sample " + sample.id + ": recurrence_days must be >= 0");
}

}  // namespace rndiff
