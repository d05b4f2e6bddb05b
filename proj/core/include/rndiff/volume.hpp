#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace rndiff {

/// Signed anatomical axis code in the LPS basis:
///   +1 left, -1 right, +2 posterior, -2 anterior, +3 superior, -3 inferior.
/// orientation[i] is the anatomical direction in which voxel index i grows.
using AxisCode = int;

constexpr std::array<AxisCode, 3> kLpsOrientation{1, 2, 3};

/// Dense 3D scalar grid. Carrier for images, masks and attention heatmaps.
/// Voxels are stored x-fastest; values are always 64-bit reals regardless of
/// the on-disk datatype. Treated as immutable once constructed, so sharing
/// across threads is safe.
struct Volume3D {
  std::array<int, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::array<AxisCode, 3> orientation{1, 2, 3};
  std::array<double, 3> origin{0.0, 0.0, 0.0};  // position of voxel (0,0,0), mm, LPS
  std::vector<double> voxels;

  std::size_t size() const { return voxels.size(); }

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims[1]) * z);
  }

  double at(int x, int y, int z) const { return voxels[index(x, y, z)]; }
  double& at(int x, int y, int z) { return voxels[index(x, y, z)]; }

  bool in_bounds(int x, int y, int z) const {
    return x >= 0 && x < dims[0] && y >= 0 && y < dims[1] && z >= 0 && z < dims[2];
  }

  static Volume3D zeros(std::array<int, 3> dims, std::array<double, 3> spacing = {1, 1, 1});
};

bool is_signed_permutation(const std::array<AxisCode, 3>& orientation);

/// Unit LPS vector pointing along a signed axis code, e.g. +2 -> (0,1,0),
/// -3 -> (0,0,-1).
std::array<double, 3> axis_unit_vector(AxisCode code);

/// Physical LPS position (mm) of a voxel index, which may lie outside the
/// stored grid (useful for crop-origin arithmetic).
std::array<double, 3> voxel_position(const Volume3D& v, std::array<int, 3> idx);

/// Same dims, spacing and orientation (origin not compared).
bool same_grid(const Volume3D& a, const Volume3D& b);

/// Throws std::invalid_argument when a Volume3D invariant is violated.
void check_volume(const Volume3D& v);

}  // namespace rndiff
