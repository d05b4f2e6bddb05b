#pragma once

#include <cstdint>
#include <string>

#include "rndiff/cohort.hpp"
#include "rndiff/rng.hpp"

namespace rndiff {

struct PhantomSpec {
  int n_unlabeled = 512;
  int n_labeled = 100;
  double class_balance = 0.34;  // fraction of labeled samples that are necrosis
  int volume_side = 64;
  double noise_sigma = 0.3;
  std::uint64_t seed = 20260817;
};

void check_phantom_spec(const PhantomSpec& spec);

/// One synthetic lesion plus the generator-side truth the cohort index does
/// not carry: the latent class of nominally unlabeled samples and whether a
/// bright distractor sheet was planted.
struct PhantomLesion {
  LesionSample sample;
  LesionClass cls;
  bool distractor = false;
};

/// Progression: filled hyperintense ellipsoid with nodular surface lumps.
/// Necrosis: bright rim shell broken by an angular gap (20-90 degrees full
/// width) around a dark interior with bubble-like sub-spheres; the mask covers
/// the full lesion support including the gap. Both sit on a smooth background
/// with optional Gaussian noise, and 30% of samples (class-independent) get a
/// bright sheet near one volume face that is deliberately outside the mask.
PhantomLesion generate_lesion(LesionClass cls, int volume_side, double noise_sigma,
                              SplitMix64& rng);

/// Writes out_dir/unlabeled and out_dir/labeled in the raw cohort format,
/// each with a provenance.json (latent class, distractor flag, seed stream
/// per sample), plus out_dir/phantom_spec.json. Per-sample seeds are derived
/// from spec.seed and a running sample counter, so regeneration with the same
/// spec is byte-identical. Labeled necrosis count = round(balance * n).
void generate_phantom_cohort(const PhantomSpec& spec, const std::string& out_dir);

}  // namespace rndiff
