#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Core>

namespace ambireg {

/// 3D density grid. Voxel (i,j,k) sits at physical position (i*sx, j*sy, k*sz) mm,
/// stored x-fastest. The y axis is the longitudinal (head-foot) axis.
struct Volume {
  std::array<int, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<float> data;

  std::size_t size() const { return std::size_t(dims[0]) * dims[1] * dims[2]; }

  std::size_t index(int i, int j, int k) const
  {
    return (std::size_t(k) * dims[1] + j) * dims[0] + i;
  }

  float at(int i, int j, int k) const { return data[index(i, j, k)]; }

  /// Physical position of the grid center; rotations about the patient axes pivot here.
  Eigen::Vector3d center_mm() const;

  /// Physical extent of the voxel-center box, i.e. (n-1)*spacing per axis.
  Eigen::Vector3d extent_mm() const;

  bool operator==(const Volume&) const = default;
};

/// Throws ParameterError if dims/spacing/data are inconsistent or values leave [0,1].
void validate(const Volume& v);

/// Index of the voxel paired with (i,j,k) by a half turn about the central y axis.
std::array<int, 3> rot180_index(const Volume& v, int i, int j, int k);

/// The volume turned by 180 degrees about its central y axis. Rendering the
/// result at pose p gives the same image as rendering v at p with lao + 180.
Volume rot180_volume(const Volume& v);

struct Marker {
  Eigen::Vector3d offset_mm{0.0, 0.0, 30.0};  ///< relative to the volume center
  double radius_mm = 12.0;
  double density = 1.0;
};

struct PhantomSpec {
  std::array<int, 3> dims{64, 128, 64};
  std::array<double, 3> spacing{2.0, 2.0, 2.0};
  int n_vertebrae = 4;
  double body_density = 0.6;
  double process_density = 0.8;
  std::optional<Marker> marker;
  std::uint64_t seed = 0;
};

/// Builds a stack of vertebra-like primitives (ellipsoid body plus an oblique
/// process bar) along the y axis. Without a marker the result is voxel-exact
/// invariant under rot180_index; a marker sphere is added afterwards.
Volume make_phantom(const PhantomSpec& spec);

/// Trilinear interpolation at continuous voxel coordinates. Points outside
/// [0, n-1] on any axis return 0.
double sample_trilinear(const Volume& v, const Eigen::Vector3d& p);

/// Resamples onto a new grid covering the same physical extent (corner voxel
/// centers aligned).
Volume resample_trilinear(const Volume& v, const std::array<int, 3>& new_dims);

void save_volume(const Volume& v, const std::filesystem::path& path);
Volume load_volume(const std::filesystem::path& path);

}  // namespace ambireg
