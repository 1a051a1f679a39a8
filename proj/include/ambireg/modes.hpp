#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "ambireg/geometry.hpp"

namespace ambireg {

using Matrix5 = Eigen::Matrix<double, kPoseDim, kPoseDim>;

struct Gmm {
  int k = 0;
  std::vector<double> weights;
  std::vector<PoseVector> means;
  std::vector<Matrix5> covariances;
  double log_likelihood = 0.0;  ///< total over the fitted samples
  std::size_t n_samples = 0;
  std::vector<double> ll_trace;  ///< per EM iteration of the winning restart (k=2)
};

struct GmmOptions {
  double covariance_reg = 1e-6;  ///< added to the diagonal of every k=2 covariance
  double tolerance = 1e-6;       ///< stop when the log-likelihood gain drops below this
  int max_iterations = 200;
  int restarts = 4;
};

/// k=1: closed-form maximum likelihood (sample mean, biased covariance).
/// k=2: EM from k-means++ seeds, best of `restarts`. Rows are sorted before
/// fitting, so the result does not depend on sample order.
Gmm fit_gmm(const Eigen::MatrixXd& samples, int k, std::uint64_t seed, const GmmOptions& opts = {});

/// Total log-likelihood of samples under g.
double gmm_log_likelihood(const Gmm& g, const Eigen::MatrixXd& samples);

/// k*(5 + 15) + (k - 1).
int gmm_parameter_count(int k);

/// 2p - 2L. n must be the sample count g was fitted on.
double aic(const Gmm& g, std::size_t n);

/// aic2 < aic1 - threshold.
bool is_multimodal(double aic1, double aic2, double threshold);

struct ModeReport {
  bool multimodal = false;
  double aic1 = 0.0;
  double aic2 = 0.0;
  double threshold = 2000.0;
  std::vector<Pose> mode_poses;          ///< descending weight
  std::vector<PoseVector> mode_vectors;  ///< same order, normalized space
  std::vector<double> mode_weights;
  PoseVector single_mean = PoseVector::Zero();  ///< k=1 mean
  Pose single_pose;
};

/// Fits k=1 and k=2 and applies the AIC rule. Uni-modal reports carry the
/// single Gaussian mean as their only mode.
ModeReport detect_modes(const Eigen::MatrixXd& samples, double threshold, std::uint64_t seed,
                        const GmmOptions& opts = {});

void to_json(nlohmann::json& j, const ModeReport& r);
void from_json(const nlohmann::json& j, ModeReport& r);

}  // namespace ambireg
