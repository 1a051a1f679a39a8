#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <Eigen/Dense>

#include "ambireg/error.hpp"
#include "ambireg/modes.hpp"
#include "ambireg/rng.hpp"

using namespace ambireg;

namespace {

// Rows drawn from a weighted two-component diagonal Gaussian mixture.
Eigen::MatrixXd two_clusters(int n, double w0, const PoseVector& m0, const PoseVector& m1, const PoseVector& sd,
                             std::uint64_t seed, std::vector<int>* labels = nullptr)
{
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution first(w0);
  Eigen::MatrixXd x(n, kPoseDim);
  for (int i = 0; i < n; ++i) {
    const bool a = first(rng);
    if (labels) labels->push_back(a ? 0 : 1);
    for (int d = 0; d < kPoseDim; ++d) {
      x(i, d) = (a ? m0[d] : m1[d]) + sd[d] * normal(rng);
    }
  }
  return x;
}

}  // namespace

TEST_SUITE("modes")
{
  TEST_CASE("k=1 is the closed-form maximum-likelihood Gaussian")
  {
    Rng rng(1);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd x(300, kPoseDim);
    for (int i = 0; i < x.rows(); ++i) {
      const double shared = normal(rng);
      for (int d = 0; d < kPoseDim; ++d) x(i, d) = 0.3 * d + (d + 1) * 0.2 * normal(rng) + 0.5 * shared;
    }
    const Gmm g = fit_gmm(x, 1, 0);
    REQUIRE(g.k == 1);
    const PoseVector mean = x.colwise().mean();
    const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
    const Matrix5 cov = centered.transpose() * centered / double(x.rows());
    const double logdet = std::log(cov.determinant());
    const Matrix5 inv = cov.inverse();
    double ll = 0.0;
    for (int i = 0; i < x.rows(); ++i) {
      const Eigen::Matrix<double, 5, 1> v = centered.row(i).transpose();
      ll += -0.5 * v.dot(inv * v) - 0.5 * logdet - 2.5 * std::log(2.0 * std::numbers::pi);
    }
    CHECK((g.means[0] - mean).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((g.covariances[0] - cov).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(g.weights[0] == 1.0);
    CHECK(std::abs(g.log_likelihood - ll) < 1e-10 * std::abs(ll));
    CHECK(std::abs(gmm_log_likelihood(g, x) - ll) < 1e-10 * std::abs(ll));
    CHECK(aic(g, 300) == doctest::Approx(2.0 * 20 - 2.0 * ll).epsilon(1e-12));
    CHECK_THROWS_AS(aic(g, 299), ParameterError);
  }

  TEST_CASE("two well separated clusters are recovered")
  {
    PoseVector m0;
    m0 << 0.1, -0.2, 0.3, 0.0, 0.1;
    PoseVector m1;
    m1 << 0.1, -0.2, 0.3, 1.6, 0.1;
    PoseVector sd;
    sd << 0.1, 0.15, 0.1, 0.05, 0.2;
    const Eigen::MatrixXd x = two_clusters(4096, 0.3, m0, m1, sd, 4);
    const Gmm g = fit_gmm(x, 2, 7);
    REQUIRE(g.k == 2);
    const int a = g.means[0][3] < g.means[1][3] ? 0 : 1;
    CHECK(std::abs(g.weights[a] - 0.3) < 0.02);
    CHECK(std::abs(g.weights[1 - a] - 0.7) < 0.02);
    for (int d = 0; d < kPoseDim; ++d) {
      CHECK(std::abs(g.means[a][d] - m0[d]) < 0.1 * sd[d]);
      CHECK(std::abs(g.means[1 - a][d] - m1[d]) < 0.1 * sd[d]);
    }
  }

  TEST_CASE("EM never decreases the log-likelihood")
  {
    PoseVector m0 = PoseVector::Zero();
    PoseVector m1 = PoseVector::Constant(0.4);
    const PoseVector sd = PoseVector::Constant(0.3);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Eigen::MatrixXd x = two_clusters(1000, 0.5, m0, m1, sd, seed);
      const Gmm g = fit_gmm(x, 2, seed);
      REQUIRE(g.ll_trace.size() >= 2);
      for (std::size_t i = 1; i < g.ll_trace.size(); ++i) {
        CHECK(g.ll_trace[i] >= g.ll_trace[i - 1] - 1e-9 * std::max(1.0, std::abs(g.ll_trace[i - 1])));
      }
      CHECK(g.log_likelihood == doctest::Approx(gmm_log_likelihood(g, x)).epsilon(1e-10));
    }
  }

  TEST_CASE("fit does not depend on sample order")
  {
    PoseVector m0 = PoseVector::Zero();
    PoseVector m1 = PoseVector::Constant(1.0);
    const Eigen::MatrixXd x = two_clusters(500, 0.4, m0, m1, PoseVector::Constant(0.3), 3);
    std::vector<int> order(x.rows());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(5);
    std::shuffle(order.begin(), order.end(), rng);
    Eigen::MatrixXd shuffled(x.rows(), kPoseDim);
    for (int i = 0; i < x.rows(); ++i) shuffled.row(i) = x.row(order[i]);
    const Gmm a = fit_gmm(x, 2, 9);
    const Gmm b = fit_gmm(shuffled, 2, 9);
    CHECK(a.weights == b.weights);
    CHECK(a.log_likelihood == b.log_likelihood);
    for (int c = 0; c < 2; ++c) {
      CHECK(a.means[c] == b.means[c]);
      CHECK(a.covariances[c] == b.covariances[c]);
    }
  }

  TEST_CASE("AIC decision rule")
  {
    CHECK(gmm_parameter_count(1) == 20);
    CHECK(gmm_parameter_count(2) == 41);
    CHECK(is_multimodal(0.0, -2000.5, 2000.0));
    CHECK_FALSE(is_multimodal(0.0, -2000.0, 2000.0));
    CHECK_FALSE(is_multimodal(0.0, 10.0, 2000.0));
    CHECK(is_multimodal(5.0, 4.0, 0.0));
    CHECK_FALSE(is_multimodal(5.0, 4.0, std::numeric_limits<double>::infinity()));
  }

  TEST_CASE("mode detection labels bimodal and unimodal posteriors")
  {
    PoseVector m0;
    m0 << 0.2, 0.1, -0.1, pose_vector(Pose{0, 0, 0, 10.0, 0})[3], 0.3;
    PoseVector m1 = m0;
    m1[3] = pose_vector(Pose{0, 0, 0, 190.0, 0})[3];
    const PoseVector sd = PoseVector::Constant(0.03);
    const ModeReport bi = detect_modes(two_clusters(4096, 0.5, m0, m1, sd, 1), 2000.0, 3);
    CHECK(bi.multimodal);
    REQUIRE(bi.mode_poses.size() == 2);
    CHECK(bi.mode_weights[0] >= bi.mode_weights[1]);
    std::vector<double> laos{bi.mode_poses[0].lao, bi.mode_poses[1].lao};
    std::sort(laos.begin(), laos.end());
    CHECK(laos[0] == doctest::Approx(10.0).epsilon(0.01));
    CHECK(laos[1] == doctest::Approx(190.0).epsilon(0.01));
    CHECK(bi.aic2 < bi.aic1 - 2000.0);

    const ModeReport uni = detect_modes(two_clusters(4096, 1.0, m0, m1, sd, 2), 2000.0, 3);
    CHECK_FALSE(uni.multimodal);
    REQUIRE(uni.mode_poses.size() == 1);
    CHECK(uni.mode_weights == std::vector<double>{1.0});
    CHECK((uni.mode_vectors[0] - uni.single_mean).norm() == 0.0);
    CHECK(uni.single_pose.lao == doctest::Approx(10.0).epsilon(0.01));

    const nlohmann::json j = bi;
    CHECK(j.at("label") == "multi-modal");
    const ModeReport back = j.get<ModeReport>();
    CHECK(back.multimodal);
    CHECK(back.aic1 == bi.aic1);
    CHECK(back.mode_weights == bi.mode_weights);
    CHECK(nlohmann::json(uni).at("label") == "uni-modal");
  }

  TEST_CASE("invalid sample sets")
  {
    CHECK_THROWS_AS(fit_gmm(Eigen::MatrixXd::Zero(49, 5), 1, 0), ParameterError);
    CHECK_THROWS_AS(fit_gmm(Eigen::MatrixXd::Zero(100, 4), 1, 0), ParameterError);
    CHECK_THROWS_AS(fit_gmm(Eigen::MatrixXd::Random(100, 5), 3, 0), ParameterError);
    Eigen::MatrixXd bad = Eigen::MatrixXd::Random(100, 5);
    bad(3, 2) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(fit_gmm(bad, 1, 0), ParameterError);
    CHECK_THROWS_AS(fit_gmm(Eigen::MatrixXd::Zero(100, 5), 1, 0), NumericError);
  }
}
