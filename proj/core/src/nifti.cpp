#include "rndiff/nifti.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace rndiff {
namespace {

// Field offsets in the 348-byte NIfTI-1 header.
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffQformCode = 252;
constexpr std::size_t kOffSformCode = 254;
constexpr std::size_t kOffQuatern = 256;
constexpr std::size_t kOffQoffset = 268;
constexpr std::size_t kOffSrow = 280;
constexpr std::size_t kOffMagic = 344;
constexpr std::size_t kHeaderSize = 348;

template <typename T>
T load(const unsigned char* p, bool swap) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if (swap) {
    unsigned char* b = reinterpret_cast<unsigned char*>(&v);
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  }
  return v;
}

template <typename T>
void store(unsigned char* p, T v) {
  std::memcpy(p, &v, sizeof(T));
}

int bytes_per_voxel(int datatype) {
  switch (datatype) {
    case kNiftiUint8: return 1;
    case kNiftiInt16: return 2;
    case kNiftiFloat32: return 4;
    case kNiftiFloat64: return 8;
    default:
      throw std::runtime_error("nifti: unsupported datatype code " + std::to_string(datatype) +
                               " (supported: 2=u8, 4=i16, 16=f32, 64=f64)");
  }
}

// Direction columns of the index->RAS affine, scaled by spacing.
using Mat33 = std::array<std::array<double, 3>, 3>;  // [row][col]

Mat33 ras_direction_matrix(const NiftiHeader& h) {
  Mat33 m{};
  if (h.sform_code > 0) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m[r][c] = h.srow[r][c];
    return m;
  }
  if (h.qform_code > 0) {
    double b = h.quatern[0], c = h.quatern[1], d = h.quatern[2];
    double a2 = 1.0 - b * b - c * c - d * d;
    double a = a2 > 0.0 ? std::sqrt(a2) : 0.0;
    double qfac = h.pixdim[0] < 0.0f ? -1.0 : 1.0;
    Mat33 r{{{a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
             {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)},
             {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c}}};
    for (int row = 0; row < 3; ++row)
      for (int col = 0; col < 3; ++col)
        m[row][col] = r[row][col] * h.pixdim[col + 1] * (col == 2 ? qfac : 1.0);
    return m;
  }
  // No orientation stored: axes assumed aligned with RAS.
  for (int i = 0; i < 3; ++i) m[i][i] = h.pixdim[i + 1];
  return m;
}

// Reduce an index->LPS direction column to a signed axis code, rejecting
// oblique columns.
AxisCode reduce_column(double x, double y, double z) {
  std::array<double, 3> v{x, y, z};
  int k = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(v[i]) > std::abs(v[k])) k = i;
  double major = std::abs(v[k]);
  if (major <= 0.0) throw std::runtime_error("nifti: degenerate orientation column");
  for (int i = 0; i < 3; ++i) {
    if (i == k) continue;
    if (std::abs(v[i]) > 1e-3 * major)
      throw std::runtime_error(
          "nifti: oblique volume (orientation is not a signed axis permutation)");
  }
  return v[k] > 0 ? (k + 1) : -(k + 1);
}

}  // namespace

NiftiHeader parse_nifti_header(const unsigned char* bytes, std::size_t n) {
  if (n >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b)
    throw std::runtime_error("nifti: compressed (.nii.gz) input is not supported; gunzip first");
  if (n < kHeaderSize) throw std::runtime_error("nifti: file shorter than the 348-byte header");

  std::int32_t hdr_native = load<std::int32_t>(bytes, false);
  bool swap;
  if (hdr_native == 348) {
    swap = false;
  } else if (load<std::int32_t>(bytes, true) == 348) {
    swap = true;
  } else {
    throw std::runtime_error("nifti: sizeof_hdr is not 348 under either byte order");
  }

  NiftiHeader h;
  h.swapped = swap;
  h.sizeof_hdr = 348;
  for (int i = 0; i < 8; ++i)
    h.dim[i] = load<std::int16_t>(bytes + kOffDim + 2 * i, swap);
  h.datatype = load<std::int16_t>(bytes + kOffDatatype, swap);
  h.bitpix = load<std::int16_t>(bytes + kOffBitpix, swap);
  for (int i = 0; i < 8; ++i)
    h.pixdim[i] = load<float>(bytes + kOffPixdim + 4 * i, swap);
  h.vox_offset = load<float>(bytes + kOffVoxOffset, swap);
  h.scl_slope = load<float>(bytes + kOffSclSlope, swap);
  h.scl_inter = load<float>(bytes + kOffSclInter, swap);
  h.qform_code = load<std::int16_t>(bytes + kOffQformCode, swap);
  h.sform_code = load<std::int16_t>(bytes + kOffSformCode, swap);
  for (int i = 0; i < 3; ++i) {
    h.quatern[i] = load<float>(bytes + kOffQuatern + 4 * i, swap);
    h.qoffset[i] = load<float>(bytes + kOffQoffset + 4 * i, swap);
  }
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c)
      h.srow[r][c] = load<float>(bytes + kOffSrow + 4 * (4 * r + c), swap);
  std::memcpy(h.magic.data(), bytes + kOffMagic, 4);

  if (std::memcmp(h.magic.data(), "n+1\0", 4) != 0) {
    if (std::memcmp(h.magic.data(), "ni1\0", 4) == 0)
      throw std::runtime_error("nifti: detached header/image pairs (ni1) are not supported");
    throw std::runtime_error("nifti: bad magic (expected \"n+1\")");
  }
  return h;
}

Volume3D read_nifti(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("nifti: cannot open " + path);

  std::vector<unsigned char> hdr_bytes(kHeaderSize);
  f.read(reinterpret_cast<char*>(hdr_bytes.data()), kHeaderSize);
  if (static_cast<std::size_t>(f.gcount()) < kHeaderSize)
    throw std::runtime_error("nifti: file shorter than the 348-byte header: " + path);

  NiftiHeader h = parse_nifti_header(hdr_bytes.data(), kHeaderSize);

  if (h.dim[0] < 3)
    throw std::runtime_error("nifti: expected a 3D volume, dim[0]=" + std::to_string(h.dim[0]));
  for (int i = 4; i <= h.dim[0] && i < 8; ++i)
    if (h.dim[i] > 1)
      throw std::runtime_error("nifti: non-singleton dimension " + std::to_string(i) +
                               " is not supported");
  int bpv = bytes_per_voxel(h.datatype);
  if (h.vox_offset < 352.0f)
    throw std::runtime_error("nifti: vox_offset must be >= 352 for embedded data");

  Volume3D vol;
  for (int i = 0; i < 3; ++i) {
    vol.dims[i] = h.dim[i + 1];
    vol.spacing[i] = h.pixdim[i + 1];
    if (vol.dims[i] <= 0)
      throw std::runtime_error("nifti: non-positive dim in header");
    if (!(vol.spacing[i] > 0.0))
      throw std::runtime_error("nifti: non-positive pixdim in header");
  }

  Mat33 ras = ras_direction_matrix(h);
  // LPS = diag(-1,-1,1) * RAS
  for (int c = 0; c < 3; ++c)
    vol.orientation[c] = reduce_column(-ras[0][c], -ras[1][c], ras[2][c]);
  if (!is_signed_permutation(vol.orientation))
    throw std::runtime_error("nifti: orientation columns do not form a signed permutation");
  if (h.sform_code > 0) {
    vol.origin = {-h.srow[0][3], -h.srow[1][3], h.srow[2][3]};
  } else if (h.qform_code > 0) {
    vol.origin = {-h.qoffset[0], -h.qoffset[1], h.qoffset[2]};
  } else {
    vol.origin = {0.0, 0.0, 0.0};
  }

  std::size_t nvox = static_cast<std::size_t>(vol.dims[0]) * vol.dims[1] * vol.dims[2];
  std::size_t payload = nvox * static_cast<std::size_t>(bpv);
  f.seekg(static_cast<std::streamoff>(h.vox_offset));
  std::vector<unsigned char> raw(payload);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(payload));
  std::size_t got = static_cast<std::size_t>(f.gcount());
  if (got < payload)
    throw std::runtime_error("nifti: truncated payload in " + path + ": expected " +
                             std::to_string(payload) + " bytes, got " + std::to_string(got));

  vol.voxels.resize(nvox);
  bool swap = h.swapped;
  const unsigned char* p = raw.data();
  switch (h.datatype) {
    case kNiftiUint8:
      for (std::size_t i = 0; i < nvox; ++i) vol.voxels[i] = static_cast<double>(p[i]);
      break;
    case kNiftiInt16:
      for (std::size_t i = 0; i < nvox; ++i)
        vol.voxels[i] = static_cast<double>(load<std::int16_t>(p + 2 * i, swap));
      break;
    case kNiftiFloat32:
      for (std::size_t i = 0; i < nvox; ++i)
        vol.voxels[i] = static_cast<double>(load<float>(p + 4 * i, swap));
      break;
    case kNiftiFloat64:
      for (std::size_t i = 0; i < nvox; ++i) vol.voxels[i] = load<double>(p + 8 * i, swap);
      break;
  }

  double slope = h.scl_slope == 0.0f ? 1.0 : static_cast<double>(h.scl_slope);
  double inter = static_cast<double>(h.scl_inter);
  if (slope != 1.0 || inter != 0.0)
    for (double& v : vol.voxels) v = slope * v + inter;

  check_volume(vol);
  return vol;
}

void write_nifti(const Volume3D& vol, int datatype, const std::string& path) {
  check_volume(vol);
  int bpv = bytes_per_voxel(datatype);

  std::vector<unsigned char> hdr(kHeaderSize, 0);
  store<std::int32_t>(hdr.data(), 348);
  store<char>(hdr.data() + 38, 'r');  // regular
  std::array<std::int16_t, 8> dim{3, static_cast<std::int16_t>(vol.dims[0]),
                                  static_cast<std::int16_t>(vol.dims[1]),
                                  static_cast<std::int16_t>(vol.dims[2]), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) store<std::int16_t>(hdr.data() + kOffDim + 2 * i, dim[i]);
  store<std::int16_t>(hdr.data() + kOffDatatype, static_cast<std::int16_t>(datatype));
  store<std::int16_t>(hdr.data() + kOffBitpix, static_cast<std::int16_t>(8 * bpv));
  std::array<float, 8> pixdim{1.0f, static_cast<float>(vol.spacing[0]),
                              static_cast<float>(vol.spacing[1]),
                              static_cast<float>(vol.spacing[2]), 1.0f, 1.0f, 1.0f, 1.0f};
  for (int i = 0; i < 8; ++i) store<float>(hdr.data() + kOffPixdim + 4 * i, pixdim[i]);
  store<float>(hdr.data() + kOffVoxOffset, 352.0f);
  store<float>(hdr.data() + kOffSclSlope, 1.0f);
  store<float>(hdr.data() + kOffSclInter, 0.0f);
  store<std::int16_t>(hdr.data() + kOffQformCode, 0);
  store<std::int16_t>(hdr.data() + kOffSformCode, 1);

  // index->RAS affine from the LPS orientation codes.
  for (int c = 0; c < 3; ++c) {
    int axis = std::abs(vol.orientation[c]) - 1;
    double d = (vol.orientation[c] > 0 ? 1.0 : -1.0) * vol.spacing[c];
    std::array<double, 3> lps{0, 0, 0};
    lps[axis] = d;
    double ras[3] = {-lps[0], -lps[1], lps[2]};
    for (int r = 0; r < 3; ++r)
      store<float>(hdr.data() + kOffSrow + 4 * (4 * r + c), static_cast<float>(ras[r]));
  }
  double t_ras[3] = {-vol.origin[0], -vol.origin[1], vol.origin[2]};
  for (int r = 0; r < 3; ++r)
    store<float>(hdr.data() + kOffSrow + 4 * (4 * r + 3), static_cast<float>(t_ras[r]));

  std::memcpy(hdr.data() + kOffMagic, "n+1\0", 4);

  std::size_t nvox = vol.voxels.size();
  std::vector<unsigned char> payload(nvox * static_cast<std::size_t>(bpv));
  unsigned char* p = payload.data();
  auto require_integral = [&](double v, double lo, double hi) {
    if (!std::isfinite(v))
      throw std::runtime_error("nifti: non-finite voxel cannot be written to integer datatype");
    double r = std::nearbyint(v);
    if (r < lo || r > hi)
      throw std::runtime_error("nifti: voxel value " + std::to_string(v) +
                               " out of range for integer datatype");
    return r;
  };
  switch (datatype) {
    case kNiftiUint8:
      for (std::size_t i = 0; i < nvox; ++i)
        p[i] = static_cast<unsigned char>(require_integral(vol.voxels[i], 0.0, 255.0));
      break;
    case kNiftiInt16:
      for (std::size_t i = 0; i < nvox; ++i)
        store<std::int16_t>(p + 2 * i, static_cast<std::int16_t>(require_integral(
                                           vol.voxels[i], -32768.0, 32767.0)));
      break;
    case kNiftiFloat32:
      for (std::size_t i = 0; i < nvox; ++i)
        store<float>(p + 4 * i, static_cast<float>(vol.voxels[i]));
      break;
    case kNiftiFloat64:
      for (std::size_t i = 0; i < nvox; ++i) store<double>(p + 8 * i, vol.voxels[i]);
      break;
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("nifti: cannot write " + path);
  f.write(reinterpret_cast<const char*>(hdr.data()), kHeaderSize);
  const char extender[4] = {0, 0, 0, 0};
  f.write(extender, 4);
  f.write(reinterpret_cast<const char*>(payload.data()),
          static_cast<std::streamsize>(payload.size()));
  if (!f) throw std::runtime_error("nifti: write failed for " + path);
}

}  // namespace rndiff
