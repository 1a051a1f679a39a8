#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include <Eigen/Dense>

#include "ambireg/error.hpp"
#include "ambireg/geometry.hpp"

using namespace ambireg;

TEST_SUITE("geometry")
{
  TEST_CASE("rotation matches the frozen Ry(lao) * Rz(cran) oracle")
  {
    const Eigen::Vector3d c(63.0, 127.0, 63.0);
    const RigidTransform xf = pose_to_transform(Pose{5.0, -3.0, 7.0, 30.0, 40.0}, c);
    const double expected[3][3] = {{0.6634139481689384, -0.5566703992264194, 0.49999999999999994},
                                   {0.6427876096865393, 0.766044443118978, 0.0},
                                   {-0.38302222155948895, 0.32139380484326957, 0.8660254037844387}};
    for (int r = 0; r < 3; ++r) {
      for (int k = 0; k < 3; ++k) {
        CHECK(xf.rotation(r, k) == doctest::Approx(expected[r][k]).epsilon(1e-14));
      }
    }
    const Eigen::Vector3d q = xf.apply(Eigen::Vector3d(10.0, 20.0, 30.0));
    CHECK(q.x() == doctest::Approx(78.73292048319533).epsilon(1e-13));
    CHECK(q.y() == doctest::Approx(7.965501272882761).epsilon(1e-13));
    CHECK(q.z() == doctest::Approx(23.894380126027663).epsilon(1e-13));
  }

  TEST_CASE("identity pose is the identity map and quarter turns are exact")
  {
    const Eigen::Vector3d c(10.0, 20.0, 30.0);
    const RigidTransform id = pose_to_transform(Pose{}, c);
    CHECK(id.rotation == Eigen::Matrix3d::Identity());
    CHECK(id.translation == Eigen::Vector3d::Zero());

    const RigidTransform q = pose_to_transform(Pose{0, 0, 0, 90.0, 0.0}, c);
    Eigen::Matrix3d ry;
    ry << 0, 0, 1, 0, 1, 0, -1, 0, 0;
    CHECK(q.rotation == ry);
    const RigidTransform h = pose_to_transform(Pose{0, 0, 0, 180.0, 0.0}, c);
    CHECK(h.apply(c) == c);
    CHECK(h.apply(c + Eigen::Vector3d(1, 2, 3)) == c + Eigen::Vector3d(-1, 2, -3));
  }

  TEST_CASE("rotations are orthonormal and keep the center fixed without translation")
  {
    const Eigen::Vector3d c(3.0, -4.0, 5.0);
    for (double lao : {-17.0, 0.0, 33.0, 181.0}) {
      for (double cran : {-20.0, 7.5}) {
        const RigidTransform xf = pose_to_transform(Pose{0, 0, 0, lao, cran}, c);
        CHECK((xf.rotation * xf.rotation.transpose() - Eigen::Matrix3d::Identity()).norm() < 1e-14);
        CHECK(xf.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-14));
        CHECK((xf.apply(c) - c).norm() < 1e-12);
      }
    }
  }

  TEST_CASE("canonical angle ranges")
  {
    CHECK(canonicalize_lao(270.0) == 270.0);
    CHECK(canonicalize_lao(-90.0) == 270.0);
    CHECK(canonicalize_lao(-89.5) == -89.5);
    CHECK(canonicalize_lao(190.0) == 190.0);
    CHECK(canonicalize_lao(380.0) == 20.0);
    CHECK(canonicalize_lao(-100.0) == 260.0);
    CHECK(canonicalize_lao(185.0) == 185.0);
    CHECK(canonicalize_lao(630.0) == 270.0);
    CHECK(canonicalize_cran(180.0) == 180.0);
    CHECK(canonicalize_cran(-180.0) == 180.0);
    CHECK(canonicalize_cran(190.0) == -170.0);
    CHECK(canonicalize_cran(-20.0) == -20.0);
  }

  TEST_CASE("pose sampler draws the documented distribution")
  {
    PoseSamplerConfig cfg;
    cfg.seed = 11;
    int flipped = 0;
    std::vector<int> cran_counts(41, 0);
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      const Pose p = sample_pose(cfg, i);
      for (double t : {p.tx, p.ty, p.tz}) {
        CHECK(t >= -20.0);
        CHECK(t <= 20.0);
      }
      CHECK(p.lao == std::round(p.lao));
      CHECK(p.cran == std::round(p.cran));
      CHECK(std::abs(p.cran) <= 20.0);
      const bool low = p.lao >= -20.0 && p.lao <= 20.0;
      const bool high = p.lao >= 160.0 && p.lao <= 200.0;
      CHECK((low || high));
      flipped += high;
      ++cran_counts.at(static_cast<int>(p.cran) + 20);
    }
    CHECK(flipped >= 0.48 * n);
    CHECK(flipped <= 0.52 * n);
    const double q = 1.0 / 41.0;
    const double se = std::sqrt(q * (1.0 - q) / n);
    for (int c : cran_counts) {
      CHECK(std::abs(c / double(n) - q) <= 3.0 * se);
    }
    CHECK(sample_pose(cfg, 17) == sample_pose(cfg, 17));
    CHECK_FALSE(sample_pose(cfg, 17) == sample_pose(cfg, 18));

    cfg.flip_prob = 0.0;
    for (int i = 0; i < 200; ++i) {
      CHECK(std::abs(sample_pose(cfg, i).lao) <= 20.0);
    }
    cfg.flip_prob = 1.0;
    for (int i = 0; i < 200; ++i) {
      CHECK(sample_pose(cfg, i).lao >= 160.0);
    }
  }

  TEST_CASE("every lao grid value is reachable")
  {
    PoseSamplerConfig cfg;
    cfg.flip_prob = 0.0;
    std::set<int> seen;
    for (int i = 0; i < 5000; ++i) {
      seen.insert(static_cast<int>(sample_pose(cfg, i).lao));
    }
    CHECK(seen.size() == 41);
  }

  TEST_CASE("sampler validation")
  {
    PoseSamplerConfig cfg;
    cfg.t_range = {5.0, -5.0};
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    cfg = {};
    cfg.rot_step_deg = 0;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    cfg = {};
    cfg.flip_prob = 1.5;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
  }

  TEST_CASE("pose vector normalization")
  {
    const Pose p{20.0, -10.0, 4.0, 90.0, -20.0};
    const PoseVector v = pose_vector(p);
    CHECK(v[0] == 1.0);
    CHECK(v[1] == -0.5);
    CHECK(v[2] == doctest::Approx(0.2));
    CHECK(v[3] == 0.0);
    CHECK(v[4] == -1.0);
    CHECK(pose_vector(Pose{0, 0, 0, -20.0, 0})[3] == doctest::Approx(-1.0));
    CHECK(pose_vector(Pose{})[3] == -90.0 / 110.0);
    CHECK(pose_vector(Pose{0, 0, 0, 200.0, 0})[3] == doctest::Approx(1.0));
    const Pose back = vector_pose(v);
    CHECK(back.tx == doctest::Approx(p.tx));
    CHECK(back.lao == doctest::Approx(p.lao));
    CHECK(back.cran == doctest::Approx(p.cran));
  }

  TEST_CASE("vector_pose inverts pose_vector")
  {
    PoseSamplerConfig cfg;
    for (int i = 0; i < 1000; ++i) {
      const Pose p = sample_pose(cfg, i);
      const Pose b = vector_pose(pose_vector(p));
      CHECK(std::abs(b.tx - p.tx) < 1e-12);
      CHECK(std::abs(b.ty - p.ty) < 1e-12);
      CHECK(std::abs(b.tz - p.tz) < 1e-12);
      CHECK(std::abs(b.lao - p.lao) < 1e-12);
      CHECK(std::abs(b.cran - p.cran) < 1e-12);
    }
  }

  TEST_CASE("pose json round trip")
  {
    const Pose p{1.25, -2.5, 3.0, 187.0, -4.0};
    const nlohmann::json j = p;
    CHECK(j.get<Pose>() == p);
  }
}
