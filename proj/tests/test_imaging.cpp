#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "rndiff/cohort.hpp"
#include "rndiff/nifti.hpp"
#include "rndiff/rng.hpp"
#include "rndiff/volume.hpp"

using namespace rndiff;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
  fs::path d = fs::temp_directory_path() / (std::string("rndiff_imaging_") + tag);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::vector<unsigned char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

Volume3D demo_volume(std::array<int, 3> dims, std::uint64_t seed = 9) {
  Volume3D v = Volume3D::zeros(dims);
  SplitMix64 rng(seed);
  for (double& x : v.voxels) x = rng.normal();
  return v;
}

template <class T>
void store_raw(std::vector<unsigned char>& buf, std::size_t off, T value) {
  std::memcpy(buf.data() + off, &value, sizeof(T));
}

template <class T>
void store_swapped(std::vector<unsigned char>& buf, std::size_t off, T value) {
  unsigned char tmp[sizeof(T)];
  std::memcpy(tmp, &value, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[off + i] = tmp[sizeof(T) - 1 - i];
}

/// Minimal hand-built .nii: f32 payload, identity sform (RAS axes).
template <bool Swapped>
std::vector<unsigned char> build_nii(std::array<int, 3> dims, const std::vector<float>& vox,
                                     float slope = 1.0f, float inter = 0.0f) {
  auto put16 = [](std::vector<unsigned char>& b, std::size_t off, std::int16_t v) {
    if (Swapped) store_swapped(b, off, v); else store_raw(b, off, v);
  };
  auto put32i = [](std::vector<unsigned char>& b, std::size_t off, std::int32_t v) {
    if (Swapped) store_swapped(b, off, v); else store_raw(b, off, v);
  };
  auto put32f = [](std::vector<unsigned char>& b, std::size_t off, float v) {
    if (Swapped) store_swapped(b, off, v); else store_raw(b, off, v);
  };

  std::vector<unsigned char> buf(352 + vox.size() * 4, 0);
  put32i(buf, 0, 348);
  put16(buf, 40, 3);
  for (int i = 0; i < 3; ++i) put16(buf, 42 + 2 * i, static_cast<std::int16_t>(dims[i]));
  for (int i = 4; i <= 7; ++i) put16(buf, 40 + 2 * i, 1);
  put16(buf, 70, 16);  // float32
  put16(buf, 72, 32);
  for (int i = 0; i <= 3; ++i) put32f(buf, 76 + 4 * i, 1.0f);
  put32f(buf, 108, 352.0f);
  put32f(buf, 112, slope);
  put32f(buf, 116, inter);
  put16(buf, 254, 1);  // sform_code
  put32f(buf, 280, 1.0f);   // srow_x = (1,0,0,0)
  put32f(buf, 300, 1.0f);   // srow_y = (0,1,0,0)
  put32f(buf, 320, 1.0f);   // srow_z = (0,0,1,0)
  buf[344] = 'n'; buf[345] = '+'; buf[346] = '1'; buf[347] = 0;
  for (std::size_t i = 0; i < vox.size(); ++i) {
    if (Swapped) store_swapped(buf, 352 + 4 * i, vox[i]);
    else store_raw(buf, 352 + 4 * i, vox[i]);
  }
  return buf;
}

void dump(const fs::path& p, const std::vector<unsigned char>& buf) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
}

}  // namespace

TEST_CASE("native and swapped headers decode to the same volume") {
  auto dir = temp_dir("endian");
  std::vector<float> vox(2 * 3 * 4);
  for (std::size_t i = 0; i < vox.size(); ++i) vox[i] = 0.25f * static_cast<float>(i) - 2.0f;

  dump(dir / "native.nii", build_nii<false>({2, 3, 4}, vox));
  dump(dir / "swapped.nii", build_nii<true>({2, 3, 4}, vox));

  Volume3D a = read_nifti((dir / "native.nii").string());
  Volume3D b = read_nifti((dir / "swapped.nii").string());
  CHECK(a.dims == std::array<int, 3>{2, 3, 4});
  CHECK(a.voxels == b.voxels);
  CHECK(a.voxels[5] == doctest::Approx(0.25 * 5 - 2.0));
  // Identity direction matrix maps voxel axes to R/A/S: codes (-L,-P,+S).
  CHECK(a.orientation == std::array<AxisCode, 3>{-1, -2, 3});
}

TEST_CASE("scl_slope and scl_inter are applied") {
  auto dir = temp_dir("scale");
  dump(dir / "scaled.nii", build_nii<false>({1, 1, 1}, {0.5f}, 2.0f, 1.0f));
  Volume3D v = read_nifti((dir / "scaled.nii").string());
  CHECK(v.voxels[0] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("write/read round trip is bit-identical for f32 and f64") {
  auto dir = temp_dir("roundtrip");
  Volume3D v = demo_volume({4, 4, 4});
  v.spacing = {1.0, 1.0, 1.0};

  write_nifti(v, kNiftiFloat64, (dir / "v64.nii").string());
  Volume3D r64 = read_nifti((dir / "v64.nii").string());
  CHECK(r64.voxels == v.voxels);
  CHECK(r64.dims == v.dims);
  CHECK(r64.spacing == v.spacing);

  Volume3D vf = v;
  for (double& x : vf.voxels) x = static_cast<double>(static_cast<float>(x));
  write_nifti(vf, kNiftiFloat32, (dir / "v32.nii").string());
  Volume3D r32 = read_nifti((dir / "v32.nii").string());
  CHECK(r32.voxels == vf.voxels);
}

TEST_CASE("write-read-write is byte stable from the second write onward") {
  auto dir = temp_dir("stable");
  Volume3D v = demo_volume({3, 5, 2});
  for (int dt : {kNiftiUint8, kNiftiInt16, kNiftiFloat32, kNiftiFloat64}) {
    Volume3D src = v;
    if (dt == kNiftiUint8)
      for (double& x : src.voxels) x = x > 0 ? 1.0 : 0.0;
    if (dt == kNiftiInt16)
      for (double& x : src.voxels) x = std::round(100.0 * x);
    write_nifti(src, dt, (dir / "w1.nii").string());
    Volume3D r1 = read_nifti((dir / "w1.nii").string());
    write_nifti(r1, dt, (dir / "w2.nii").string());
    Volume3D r2 = read_nifti((dir / "w2.nii").string());
    write_nifti(r2, dt, (dir / "w3.nii").string());
    CHECK(file_bytes(dir / "w2.nii") == file_bytes(dir / "w3.nii"));
  }
}

TEST_CASE("integer write rejects non-finite voxels") {
  auto dir = temp_dir("nonfinite");
  Volume3D v = Volume3D::zeros({2, 2, 2});
  v.voxels[3] = std::nan("");
  CHECK_THROWS_WITH_AS(write_nifti(v, kNiftiInt16, (dir / "bad.nii").string()),
                       doctest::Contains("non-finite"), std::runtime_error);
  CHECK_NOTHROW(write_nifti(v, kNiftiFloat64, (dir / "ok.nii").string()));
}

TEST_CASE("malformed files are rejected with specific errors") {
  auto dir = temp_dir("malformed");
  std::vector<float> vox(8, 1.0f);
  auto good = build_nii<false>({2, 2, 2}, vox);

  SUBCASE("gzip magic") {
    std::vector<unsigned char> gz{0x1f, 0x8b, 0x08, 0x00};
    gz.resize(400, 0);
    dump(dir / "a.nii", gz);
    CHECK_THROWS_WITH_AS(read_nifti((dir / "a.nii").string()),
                         doctest::Contains("compressed"), std::runtime_error);
  }
  SUBCASE("bad magic") {
    auto bad = good;
    bad[344] = 'x';
    dump(dir / "b.nii", bad);
    CHECK_THROWS_AS(read_nifti((dir / "b.nii").string()), std::runtime_error);
  }
  SUBCASE("detached header magic") {
    auto bad = good;
    bad[345] = 'i';  // "ni1"
    dump(dir / "c.nii", bad);
    CHECK_THROWS_WITH_AS(read_nifti((dir / "c.nii").string()),
                         doctest::Contains("detached"), std::runtime_error);
  }
  SUBCASE("sizeof_hdr invalid under both endiannesses") {
    auto bad = good;
    store_raw<std::int32_t>(bad, 0, 4711);
    dump(dir / "d.nii", bad);
    CHECK_THROWS_AS(read_nifti((dir / "d.nii").string()), std::runtime_error);
  }
  SUBCASE("truncated payload reports expected and actual bytes") {
    auto bad = good;
    bad.resize(352 + 8 * 4 - 6);
    dump(dir / "e.nii", bad);
    CHECK_THROWS_WITH_AS(read_nifti((dir / "e.nii").string()), doctest::Contains("32"),
                         std::runtime_error);
  }
  SUBCASE("oblique direction matrix") {
    auto bad = good;
    // 30-degree rotation in the xy plane: not a signed permutation.
    store_raw<float>(bad, 280, 0.866f);
    store_raw<float>(bad, 284, -0.5f);
    store_raw<float>(bad, 300, 0.5f);
    store_raw<float>(bad, 304, 0.866f);
    dump(dir / "f.nii", bad);
    CHECK_THROWS_WITH_AS(read_nifti((dir / "f.nii").string()),
                         doctest::Contains("oblique"), std::runtime_error);
  }
  SUBCASE("unsupported datatype") {
    auto bad = good;
    store_raw<std::int16_t>(bad, 70, 128);  // rgb24
    dump(dir / "g.nii", bad);
    CHECK_THROWS_AS(read_nifti((dir / "g.nii").string()), std::runtime_error);
  }
}

TEST_CASE("cohort round trip preserves order, labels and clinical fields") {
  auto dir = temp_dir("cohort");
  std::vector<LesionSample> samples;
  for (int i = 0; i < 3; ++i) {
    LesionSample s;
    s.id = "case" + std::to_string(i);
    if (i != 1) s.label = i == 0 ? LesionClass::progression : LesionClass::necrosis;
    s.clinical = {55.5 + i, i % 2 ? "female" : "male", "NSCLC", "yes", 120.25 * (i + 1)};
    s.image = demo_volume({4, 4, 4}, 100 + i);
    s.mask = Volume3D::zeros({4, 4, 4});
    s.mask.at(2, 2, 2) = 1.0;
    samples.push_back(std::move(s));
  }
  write_raw_cohort(dir.string(), samples);

  auto loaded = read_raw_cohort(dir.string());
  REQUIRE(loaded.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(loaded[i].id == samples[i].id);
    CHECK(loaded[i].label == samples[i].label);
    CHECK(loaded[i].clinical.age == samples[i].clinical.age);
    CHECK(loaded[i].clinical.sex == samples[i].clinical.sex);
    CHECK(loaded[i].clinical.recurrence_days == samples[i].clinical.recurrence_days);
    CHECK(loaded[i].image.voxels == samples[i].image.voxels);
  }
  CHECK(!loaded[1].label.has_value());
}

TEST_CASE("cohort masks are binarized on load") {
  auto dir = temp_dir("binarize");
  LesionSample s;
  s.id = "m";
  s.clinical = {60, "male", "other", "no", 10};
  s.image = demo_volume({2, 2, 2});
  s.mask = Volume3D::zeros({2, 2, 2});
  s.mask.voxels = {0, 5, 0, 0, 3, 0, 0, 0};
  write_raw_cohort(dir.string(), {s});

  // Rewrite the mask with raw values {0,5} to bypass the writer's own
  // binarization and exercise the reader's rule.
  Volume3D raw = Volume3D::zeros({2, 2, 2});
  raw.voxels = {0, 5, 0, 0, 3, 0, 0, 0};
  write_nifti(raw, kNiftiFloat64, (dir / "m_mask.nii").string());

  auto loaded = read_raw_cohort(dir.string());
  CHECK(loaded[0].mask.voxels == std::vector<double>{0, 1, 0, 0, 1, 0, 0, 0});
}

TEST_CASE("cohort errors: missing file and dimension mismatch") {
  auto dir = temp_dir("coherr");
  LesionSample s;
  s.id = "x";
  s.clinical = {60, "male", "other", "no", 10};
  s.image = demo_volume({4, 4, 4});
  s.mask = Volume3D::zeros({4, 4, 4});
  s.mask.at(0, 0, 0) = 1.0;
  write_raw_cohort(dir.string(), {s});

  SUBCASE("missing mask file") {
    fs::remove(dir / "x_mask.nii");
    CHECK_THROWS_WITH_AS(read_raw_cohort(dir.string()), doctest::Contains("missing"),
                         std::runtime_error);
  }
  SUBCASE("image 4^3 with mask 2^3") {
    Volume3D small = Volume3D::zeros({2, 2, 2});
    write_nifti(small, kNiftiUint8, (dir / "x_mask.nii").string());
    CHECK_THROWS_WITH_AS(read_raw_cohort(dir.string()), doctest::Contains("mismatch"),
                         std::runtime_error);
  }
}
