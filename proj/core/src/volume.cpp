#include "rndiff/volume.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace rndiff {

Volume3D Volume3D::zeros(std::array<int, 3> dims, std::array<double, 3> spacing) {
  Volume3D v;
  v.dims = dims;
  v.spacing = spacing;
  v.voxels.assign(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2], 0.0);
  return v;
}

bool is_signed_permutation(const std::array<AxisCode, 3>& orientation) {
  std::array<bool, 3> seen{false, false, false};
  for (AxisCode c : orientation) {
    int a = std::abs(c);
    if (a < 1 || a > 3 || seen[a - 1]) return false;
    seen[a - 1] = true;
  }
  return true;
}

std::array<double, 3> axis_unit_vector(AxisCode code) {
  int a = std::abs(code);
  if (a < 1 || a > 3) throw std::invalid_argument("axis_unit_vector: bad axis code");
  std::array<double, 3> u{0.0, 0.0, 0.0};
  u[a - 1] = code > 0 ? 1.0 : -1.0;
  return u;
}

std::array<double, 3> voxel_position(const Volume3D& v, std::array<int, 3> idx) {
  std::array<double, 3> pos = v.origin;
  for (int i = 0; i < 3; ++i) {
    auto dir = axis_unit_vector(v.orientation[i]);
    for (int k = 0; k < 3; ++k) pos[k] += dir[k] * v.spacing[i] * idx[i];
  }
  return pos;
}

bool same_grid(const Volume3D& a, const Volume3D& b) {
  return a.dims == b.dims && a.spacing == b.spacing && a.orientation == b.orientation;
}

void check_volume(const Volume3D& v) {
  for (int i = 0; i < 3; ++i) {
    if (v.dims[i] <= 0)
      throw std::invalid_argument("Volume3D: dims must be positive, got " +
                                  std::to_string(v.dims[i]) + " on axis " + std::to_string(i));
    if (!(v.spacing[i] > 0.0))
      throw std::invalid_argument("Volume3D: spacing must be positive on axis " +
                                  std::to_string(i));
  }
  if (!is_signed_permutation(v.orientation))
    throw std::invalid_argument("Volume3D: orientation codes must form a signed permutation");
  std::size_t expected =
      static_cast<std::size_t>(v.dims[0]) * static_cast<std::size_t>(v.dims[1]) *
      static_cast<std::size_t>(v.dims[2]);
  if (v.voxels.size() != expected)
    throw std::invalid_argument("Volume3D: voxel count " + std::to_string(v.voxels.size()) +
                                " does not match dims product " + std::to_string(expected));
}

}  // namespace rndiff
