#pragma once

#include <array>
#include <cstdint>

#include <Eigen/Core>
#include <json.hpp>

namespace ambireg {

/// C-arm pose relative to the patient volume. Axes: x sagittal, y longitudinal,
/// z transverse. Translations in mm, angles in degrees.
struct Pose {
  double tx = 0.0;
  double ty = 0.0;
  double tz = 0.0;
  double lao = 0.0;   ///< about the longitudinal (y) axis, canonical range (-90, 270]
  double cran = 0.0;  ///< about the transverse (z) axis, range (-180, 180]

  bool operator==(const Pose&) const = default;
};

inline constexpr int kPoseDim = 5;
using PoseVector = Eigen::Matrix<double, kPoseDim, 1>;

struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }
  Eigen::Vector3d apply_rotation(const Eigen::Vector3d& d) const { return rotation * d; }
};

/// Maps C-arm coordinates (identity pose) into the volume frame:
/// q -> Ry(lao) * (Rz(cran) * (q - c) + t) + c, with c the volume center.
/// The lao swing is outermost, so for a volume that is symmetric under a half
/// turn about its central y axis, poses differing by 180 deg lao see the same image.
RigidTransform pose_to_transform(const Pose& p, const Eigen::Vector3d& volume_center);

/// Maps any finite angle to the congruent value in (-90, 270].
double canonicalize_lao(double angle_deg);

/// Maps any finite angle to the congruent value in (-180, 180].
double canonicalize_cran(double angle_deg);

struct PoseSamplerConfig {
  std::array<double, 2> t_range{-20.0, 20.0};
  std::array<int, 2> rot_range_deg{-20, 20};
  int rot_step_deg = 1;
  double flip_prob = 0.5;
  std::uint64_t seed = 0;
};

void validate(const PoseSamplerConfig& cfg);

/// Draw `draw_index` of the pose stream; independent of every other index.
/// Translations are continuous-uniform, angles uniform on the integer grid, and
/// with probability flip_prob lao is shifted by 180 degrees.
Pose sample_pose(const PoseSamplerConfig& cfg, std::uint64_t draw_index);

/// Network-facing normalization: translations / 20 mm, cran / 20 deg,
/// (lao - 90) / 110 so that both lao regions [-20,20] and [160,200] land in [-1,1].
PoseVector pose_vector(const Pose& p);
Pose vector_pose(const PoseVector& v);

/// Degrees per unit of the normalized lao component.
inline constexpr double kLaoScale = 110.0;
inline constexpr double kLaoOffset = 90.0;
inline constexpr double kTranslationScale = 20.0;
inline constexpr double kCranScale = 20.0;

void to_json(nlohmann::json& j, const Pose& p);
void from_json(const nlohmann::json& j, Pose& p);

}  // namespace ambireg
