#include "rndiff/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "rndiff/csv.hpp"
#include "rndiff/nifti.hpp"

namespace fs = std::filesystem;

namespace rndiff {
namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDistractorRate = 0.3;
// Lognormal log-means for recurrence_days: delta 0.37 at sigma 0.5 puts the
// single-feature AUC near 0.70, a deliberately weak non-imaging signal.
constexpr double kRecurrenceLogMeanProgression = 5.01;
constexpr double kRecurrenceLogMeanNecrosis = 5.38;
constexpr double kRecurrenceLogSigma = 0.5;

struct Vec3 {
  double x, y, z;
};

Vec3 random_unit(SplitMix64& rng) {
  while (true) {
    Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    double n = std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z);
    if (n > 1e-6) return {v.x / n, v.y / n, v.z / n};
  }
}

ClinicalRecord sample_clinical(LesionClass cls, SplitMix64& rng) {
  ClinicalRecord rec;
  rec.age = rng.uniform(35.0, 85.0);
  rec.sex = rng.bernoulli(0.5) ? "female" : "male";
  const double u = rng.uniform();
  // Site mix loosely shaped like a brain-metastasis case load.
  if (u < 0.45)
    rec.primary = "NSCLC";
  else if (u < 0.65)
    rec.primary = "breast";
  else if (u < 0.80)
    rec.primary = "melanoma";
  else if (u < 0.88)
    rec.primary = "SCLC";
  else if (u < 0.93)
    rec.primary = "ovary";
  else
    rec.primary = "other";
  rec.systemic = rng.bernoulli(0.5) ? "yes" : "no";
  const double mu = cls == LesionClass::necrosis ? kRecurrenceLogMeanNecrosis
                                                 : kRecurrenceLogMeanProgression;
  rec.recurrence_days = std::exp(rng.normal(mu, kRecurrenceLogSigma));
  return rec;
}

}  // namespace

void check_phantom_spec(const PhantomSpec& spec) {
  if (spec.n_unlabeled < 0 || spec.n_labeled < 0)
    throw std::invalid_argument("phantom: sample counts must be >= 0");
  if (!(spec.class_balance >= 0.0 && spec.class_balance <= 1.0))
    throw std::invalid_argument("phantom: class_balance must be in [0,1]");
  if (spec.volume_side < 16)
    throw std::invalid_argument("phantom: volume_side must be >= 16");
  if (!(spec.noise_sigma >= 0.0))
    throw std::invalid_argument("phantom: noise_sigma must be >= 0");
}

PhantomLesion generate_lesion(LesionClass cls, int S, double noise_sigma, SplitMix64& rng) {
  if (S < 16) throw std::invalid_argument("generate_lesion: volume_side must be >= 16");

  Volume3D image = Volume3D::zeros({S, S, S});
  Volume3D mask = Volume3D::zeros({S, S, S});

  // Smooth low-frequency background around 0.08.
  const double bg_amp = 0.03 + 0.02 * rng.uniform();
  const double fx = rng.bernoulli(0.5) ? 1.0 : 2.0;
  const double fy = rng.bernoulli(0.5) ? 1.0 : 2.0;
  const double fz = rng.bernoulli(0.5) ? 1.0 : 2.0;
  const double px = rng.uniform(0.0, 2.0 * kPi);
  const double py = rng.uniform(0.0, 2.0 * kPi);
  const double pz = rng.uniform(0.0, 2.0 * kPi);

  const Vec3 c{S / 2.0 + rng.uniform(-S / 16.0, S / 16.0),
               S / 2.0 + rng.uniform(-S / 16.0, S / 16.0),
               S / 2.0 + rng.uniform(-S / 16.0, S / 16.0)};
  const double r = rng.uniform(0.18, 0.26) * S;
  const Vec3 ax{rng.uniform(0.85, 1.18), rng.uniform(0.85, 1.18), rng.uniform(0.85, 1.18)};

  // Mild multiplicative texture shared by both classes.
  const double tf = rng.uniform(2.0, 4.0);
  const double tp1 = rng.uniform(0.0, 2.0 * kPi);
  const double tp2 = rng.uniform(0.0, 2.0 * kPi);
  const double tp3 = rng.uniform(0.0, 2.0 * kPi);

  struct Ball {
    Vec3 c;
    double r;
  };
  std::vector<Ball> lumps;   // progression surface nodules
  std::vector<Ball> bubbles; // necrosis interior bubbles
  Vec3 gap_dir{0, 0, 1};
  double gap_cos = 2.0;  // cos of gap half-angle; 2.0 disables the gap

  if (cls == LesionClass::progression) {
    const int n_lumps = 5 + static_cast<int>(rng.uniform_int(6));
    for (int k = 0; k < n_lumps; ++k) {
      const Vec3 d = random_unit(rng);
      lumps.push_back({{c.x + d.x * r * ax.x, c.y + d.y * r * ax.y, c.z + d.z * r * ax.z},
                       rng.uniform(0.15, 0.30) * r});
    }
  } else {
    gap_dir = random_unit(rng);
    gap_cos = std::cos(rng.uniform(10.0, 45.0) * kPi / 180.0);
    const int n_bubbles = 3 + static_cast<int>(rng.uniform_int(4));
    for (int k = 0; k < n_bubbles; ++k) {
      bubbles.push_back({{c.x + rng.uniform(-0.5, 0.5) * r, c.y + rng.uniform(-0.5, 0.5) * r,
                          c.z + rng.uniform(-0.5, 0.5) * r},
                         rng.uniform(0.10, 0.22) * r});
    }
  }

  for (int z = 0; z < S; ++z)
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        const double bg = 0.08 + bg_amp * std::cos(2 * kPi * fx * x / S + px) *
                                      std::cos(2 * kPi * fy * y / S + py) *
                                      std::cos(2 * kPi * fz * z / S + pz);
        const double tex = std::cos(2 * kPi * tf * x / S + tp1) *
                           std::cos(2 * kPi * tf * y / S + tp2) *
                           std::cos(2 * kPi * tf * z / S + tp3);
        const Vec3 d{x - c.x, y - c.y, z - c.z};
        const double rho = std::sqrt(d.x * d.x / (r * ax.x * r * ax.x) +
                                     d.y * d.y / (r * ax.y * r * ax.y) +
                                     d.z * d.z / (r * ax.z * r * ax.z));
        double v = bg;
        bool in_mask = false;
        if (cls == LesionClass::progression) {
          bool inside = rho <= 1.0;
          for (const Ball& b : lumps) {
            if (inside) break;
            const double dx = x - b.c.x, dy = y - b.c.y, dz = z - b.c.z;
            inside = dx * dx + dy * dy + dz * dz <= b.r * b.r;
          }
          if (inside) {
            v = 1.0 + 0.08 * tex;
            in_mask = true;
          }
        } else {
          if (rho <= 1.0) {
            in_mask = true;  // support includes the gap and the dark core
            const double dn = std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z);
            const double cosang =
                dn > 1e-9 ? (d.x * gap_dir.x + d.y * gap_dir.y + d.z * gap_dir.z) / dn : 1.0;
            const bool in_gap_cone = cosang >= gap_cos;
            if (rho >= 0.80 && !in_gap_cone) {
              v = 1.0 + 0.05 * tex;  // enhancing rim
            } else {
              v = 0.25 + 0.05 * tex;  // hypointense interior / rim gap
              for (const Ball& b : bubbles) {
                const double dx = x - b.c.x, dy = y - b.c.y, dz = z - b.c.z;
                if (dx * dx + dy * dy + dz * dz <= b.r * b.r) {
                  v = 0.12;
                  break;
                }
              }
            }
          }
        }
        image.at(x, y, z) = v;
        if (in_mask) mask.at(x, y, z) = 1.0;
      }

  // Class-independent confounder: a bright sheet hugging one face, outside
  // the mask, so attention spent on it is attention wasted.
  const bool distractor = rng.bernoulli(kDistractorRate);
  const int face = static_cast<int>(rng.uniform_int(6));
  const int offset = 2 + static_cast<int>(rng.uniform_int(3));
  if (distractor) {
    const int axis = face / 2;
    const bool near_side = (face % 2) == 0;
    const int lo = near_side ? offset : S - offset - 2;
    for (int z = 0; z < S; ++z)
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
          const int coord = axis == 0 ? x : (axis == 1 ? y : z);
          if (coord >= lo && coord < lo + 2)
            image.at(x, y, z) = std::max(image.at(x, y, z), 0.95);
        }
  }

  if (noise_sigma > 0.0)
    for (double& v : image.voxels) v += rng.normal(0.0, noise_sigma);

  PhantomLesion out;
  out.cls = cls;
  out.distractor = distractor;
  out.sample.label = cls;
  out.sample.image = std::move(image);
  out.sample.mask = std::move(mask);
  out.sample.clinical = sample_clinical(cls, rng);
  return out;
}

void generate_phantom_cohort(const PhantomSpec& spec, const std::string& out_dir) {
  check_phantom_spec(spec);

  // Labeled class sequence: round(balance*n) necrosis, then a seeded shuffle
  // so class is independent of index order.
  const int n_necro = static_cast<int>(std::llround(spec.class_balance * spec.n_labeled));
  std::vector<LesionClass> labeled_cls(spec.n_labeled, LesionClass::progression);
  for (int i = 0; i < n_necro; ++i) labeled_cls[i] = LesionClass::necrosis;
  SplitMix64 shuffle_rng = SplitMix64::derive(spec.seed, 0xC0480);
  for (int i = spec.n_labeled - 1; i > 0; --i) {
    const int j = static_cast<int>(shuffle_rng.uniform_int(static_cast<std::uint64_t>(i) + 1));
    std::swap(labeled_cls[i], labeled_cls[j]);
  }

  std::uint64_t stream = 0;
  auto emit_set = [&](const std::string& set_name, int count, bool labeled) {
    const fs::path dir = fs::path(out_dir) / set_name;
    fs::create_directories(dir);
    std::ofstream index(dir / kCohortIndexName);
    if (!index)
      throw std::runtime_error("phantom: cannot write cohort index in " + dir.string());
    index << "id,label,age,sex,primary,systemic,recurrence_days,image,mask\n";

    nlohmann::ordered_json prov;
    prov["set"] = set_name;
    prov["seed"] = spec.seed;
    prov["volume_side"] = spec.volume_side;
    prov["noise_sigma"] = spec.noise_sigma;
    prov["samples"] = nlohmann::ordered_json::array();

    for (int i = 0; i < count; ++i) {
      const std::uint64_t this_stream = stream++;
      SplitMix64 rng = SplitMix64::derive(spec.seed, this_stream);
      const LesionClass cls =
          labeled ? labeled_cls[i]
                  : (rng.bernoulli(spec.class_balance) ? LesionClass::necrosis
                                                       : LesionClass::progression);
      PhantomLesion lesion = generate_lesion(cls, spec.volume_side, spec.noise_sigma, rng);

      char id[16];
      std::snprintf(id, sizeof(id), "%c%04d", labeled ? 'l' : 'u', i);
      const std::string img_rel = std::string(id) + "_img.nii";
      const std::string msk_rel = std::string(id) + "_mask.nii";
      write_nifti(lesion.sample.image, kNiftiFloat64, (dir / img_rel).string());
      write_nifti(lesion.sample.mask, kNiftiUint8, (dir / msk_rel).string());

      const ClinicalRecord& rec = lesion.sample.clinical;
      index << id << ',';
      if (labeled) index << static_cast<int>(cls);
      index << ',' << format_g17(rec.age) << ',' << rec.sex << ',' << rec.primary << ','
            << rec.systemic << ',' << format_g17(rec.recurrence_days) << ',' << img_rel << ','
            << msk_rel << "\n";

      nlohmann::ordered_json s;
      s["id"] = id;
      s["class"] = static_cast<int>(cls);
      s["distractor"] = lesion.distractor;
      s["stream"] = this_stream;
      prov["samples"].push_back(std::move(s));
    }
    std::ofstream pf(dir / "provenance.json");
    pf << prov.dump(2) << "\n";
  };

  emit_set("unlabeled", spec.n_unlabeled, false);
  emit_set("labeled", spec.n_labeled, true);

  nlohmann::ordered_json js;
  js["n_unlabeled"] = spec.n_unlabeled;
  js["n_labeled"] = spec.n_labeled;
  js["class_balance"] = spec.class_balance;
  js["volume_side"] = spec.volume_side;
  js["noise_sigma"] = spec.noise_sigma;
  js["seed"] = spec.seed;
  std::ofstream sf(fs::path(out_dir) / "phantom_spec.json");
  if (!sf) throw std::runtime_error("phantom: cannot write phantom_spec.json in " + out_dir);
  sf << js.dump(2) << "\n";
}

}  // namespace rndiff
