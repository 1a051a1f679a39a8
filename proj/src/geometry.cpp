#include "ambireg/geometry.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>
#include <json.hpp>

#include "ambireg/error.hpp"
#include "ambireg/rng.hpp"

namespace ambireg {

namespace {

double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

// Exact values at multiples of 90 degrees keep half turns voxel-exact.
void sin_cos_deg(double deg, double& s, double& c)
{
  const double r = std::fmod(deg, 360.0);
  if (r == std::floor(r) && std::fmod(r, 90.0) == 0.0) {
    const int q = ((static_cast<int>(r) / 90) % 4 + 4) % 4;
    constexpr double kSin[4] = {0.0, 1.0, 0.0, -1.0};
    constexpr double kCos[4] = {1.0, 0.0, -1.0, 0.0};
    s = kSin[q];
    c = kCos[q];
    return;
  }
  s = std::sin(deg2rad(deg));
  c = std::cos(deg2rad(deg));
}

double canonicalize(double angle_deg, double low)
{
  if (!std::isfinite(angle_deg)) {
    throw ParameterError("angle must be finite");
  }
  if (angle_deg > low && angle_deg <= low + 360.0) {
    return angle_deg;
  }
  double r = std::fmod(angle_deg - low, 360.0);
  if (r <= 0.0) {
    r += 360.0;
  }
  double out = r + low;
  if (out <= low) {
    out = low + 360.0;
  }
  return out;
}

}  // namespace

RigidTransform pose_to_transform(const Pose& p, const Eigen::Vector3d& volume_center)
{
  double sl, cl, sc, cc;
  sin_cos_deg(p.lao, sl, cl);
  sin_cos_deg(p.cran, sc, cc);
  Eigen::Matrix3d ry;
  ry << cl, 0.0, sl,
        0.0, 1.0, 0.0,
        -sl, 0.0, cl;
  Eigen::Matrix3d rz;
  rz << cc, -sc, 0.0,
        sc, cc, 0.0,
        0.0, 0.0, 1.0;
  RigidTransform t;
  t.rotation = ry * rz;
  t.translation = volume_center + ry * Eigen::Vector3d(p.tx, p.ty, p.tz) - t.rotation * volume_center;
  return t;
}

double canonicalize_lao(double angle_deg) { return canonicalize(angle_deg, -90.0); }

double canonicalize_cran(double angle_deg) { return canonicalize(angle_deg, -180.0); }

void validate(const PoseSamplerConfig& cfg)
{
  if (!(cfg.t_range[0] < cfg.t_range[1])) {
    throw ConfigError("sampler t_range must satisfy low < high");
  }
  if (cfg.rot_step_deg <= 0 || cfg.rot_range_deg[0] > cfg.rot_range_deg[1] ||
      (cfg.rot_range_deg[1] - cfg.rot_range_deg[0]) % cfg.rot_step_deg != 0) {
    throw ConfigError("sampler rot_step_deg must be positive and divide the rotation range");
  }
  if (!(cfg.flip_prob >= 0.0 && cfg.flip_prob <= 1.0)) {
    throw ConfigError("sampler flip_prob must be in [0, 1]");
  }
}

Pose sample_pose(const PoseSamplerConfig& cfg, std::uint64_t draw_index)
{
  validate(cfg);
  Rng rng = make_rng(cfg.seed, draw_index);
  std::uniform_real_distribution<double> trans(cfg.t_range[0], cfg.t_range[1]);
  const int n_steps = (cfg.rot_range_deg[1] - cfg.rot_range_deg[0]) / cfg.rot_step_deg;
  std::uniform_int_distribution<int> rot(0, n_steps);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  Pose p;
  p.tx = trans(rng);
  p.ty = trans(rng);
  p.tz = trans(rng);
  p.lao = cfg.rot_range_deg[0] + cfg.rot_step_deg * rot(rng);
  p.cran = cfg.rot_range_deg[0] + cfg.rot_step_deg * rot(rng);
  if (coin(rng) < cfg.flip_prob) {
    p.lao += 180.0;
  }
  p.lao = canonicalize_lao(p.lao);
  p.cran = canonicalize_cran(p.cran);
  return p;
}

PoseVector pose_vector(const Pose& p)
{
  PoseVector v;
  v << p.tx / kTranslationScale, p.ty / kTranslationScale, p.tz / kTranslationScale,
      (p.lao - kLaoOffset) / kLaoScale, p.cran / kCranScale;
  return v;
}

Pose vector_pose(const PoseVector& v)
{
  return {v[0] * kTranslationScale, v[1] * kTranslationScale, v[2] * kTranslationScale,
          v[3] * kLaoScale + kLaoOffset, v[4] * kCranScale};
}

void to_json(nlohmann::json& j, const Pose& p)
{
  j = nlohmann::json{{"tx", p.tx}, {"ty", p.ty}, {"tz", p.tz}, {"lao", p.lao}, {"cran", p.cran}};
}

void from_json(const nlohmann::json& j, Pose& p)
{
  p.tx = j.at("tx").get<double>();
  p.ty = j.at("ty").get<double>();
  p.tz = j.at("tz").get<double>();
  p.lao = j.at("lao").get<double>();
  p.cran = j.at("cran").get<double>();
}

}  // namespace ambireg
