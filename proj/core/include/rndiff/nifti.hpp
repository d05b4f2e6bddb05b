#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "rndiff/volume.hpp"

namespace rndiff {

// Supported NIfTI-1 datatype codes.
constexpr int kNiftiUint8 = 2;
constexpr int kNiftiInt16 = 4;
constexpr int kNiftiFloat32 = 16;
constexpr int kNiftiFloat64 = 64;

/// Decoded NIfTI-1 header, already endian-resolved. Only the fields this
/// pipeline consumes are kept.
struct NiftiHeader {
  std::int32_t sizeof_hdr = 348;
  std::array<std::int16_t, 8> dim{};
  std::int16_t datatype = 0;
  std::int16_t bitpix = 0;
  std::array<float, 8> pixdim{};
  float vox_offset = 352.0f;
  float scl_slope = 1.0f;
  float scl_inter = 0.0f;
  std::int16_t qform_code = 0;
  std::int16_t sform_code = 0;
  std::array<float, 3> quatern{};   // b, c, d
  std::array<float, 3> qoffset{};   // x, y, z
  std::array<std::array<float, 4>, 3> srow{};
  std::array<char, 4> magic{};
  bool swapped = false;  // header bytes were byte-swapped relative to this machine
};

/// Parse a 348-byte NIfTI-1 header, resolving endianness via sizeof_hdr.
NiftiHeader parse_nifti_header(const unsigned char* bytes, std::size_t n);

/// Read an uncompressed single-file .nii volume. Voxels are decoded to
/// 64-bit reals with scl_slope/scl_inter applied (slope 0 treated as 1).
/// Orientation is reduced from the stored sform/qform to the nearest signed
/// permutation; oblique volumes are rejected.
Volume3D read_nifti(const std::string& path);

/// Write an uncompressed single-file .nii volume with the given datatype
/// code. Integer datatypes round to nearest and reject non-finite or
/// out-of-range values.
void write_nifti(const Volume3D& vol, int datatype, const std::string& path);

}  // namespace rndiff
