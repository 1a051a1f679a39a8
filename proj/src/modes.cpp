#include "ambireg/modes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <Eigen/Cholesky>
#include <fmt/format.h>

#include "ambireg/error.hpp"
#include "ambireg/rng.hpp"

namespace ambireg {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

void check_samples(const Eigen::MatrixXd& x)
{
  if (x.cols() != kPoseDim) {
    throw ParameterError(fmt::format("samples must have {} columns, got {}", kPoseDim, x.cols()));
  }
  if (x.rows() < 50) {
    throw ParameterError(fmt::format("need at least 50 samples, got {}", x.rows()));
  }
  if (!x.allFinite()) {
    throw ParameterError("samples contain non-finite values");
  }
}

Eigen::MatrixXd sorted_rows(const Eigen::MatrixXd& x)
{
  std::vector<Eigen::Index> order(x.rows());
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (int d = 0; d < kPoseDim; ++d) {
      if (x(a, d) != x(b, d)) {
        return x(a, d) < x(b, d);
      }
    }
    return false;
  });
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out.row(i) = x.row(order[i]);
  }
  return out;
}

struct Component {
  PoseVector mean;
  Eigen::LLT<Matrix5> chol;
  double log_norm = 0.0;  ///< -0.5 * (d ln 2pi + ln det)
};

Component prepare(const PoseVector& mean, const Matrix5& cov)
{
  Component c;
  c.mean = mean;
  c.chol.compute(cov);
  if (c.chol.info() != Eigen::Success) {
    throw NumericError("GMM covariance is not positive definite");
  }
  const PoseVector diag = c.chol.matrixLLT().diagonal();
  double log_det = 0.0;
  for (int d = 0; d < kPoseDim; ++d) {
    if (!(diag[d] > 0.0)) {
      throw NumericError("GMM covariance is singular");
    }
    log_det += 2.0 * std::log(diag[d]);
  }
  c.log_norm = -0.5 * (kPoseDim * kLog2Pi + log_det);
  return c;
}

double log_density(const Component& c, const PoseVector& x)
{
  const PoseVector w = c.chol.matrixL().solve(x - c.mean);
  return c.log_norm - 0.5 * w.squaredNorm();
}

double log_sum_exp(double a, double b)
{
  const double m = std::max(a, b);
  if (m == -std::numeric_limits<double>::infinity()) {
    return m;
  }
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

Gmm fit_single(const Eigen::MatrixXd& x)
{
  const double n = static_cast<double>(x.rows());
  Gmm g;
  g.k = 1;
  g.n_samples = x.rows();
  const PoseVector mean = x.colwise().sum().transpose() / n;
  Matrix5 cov = Matrix5::Zero();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const PoseVector d = x.row(i).transpose() - mean;
    cov += d * d.transpose();
  }
  cov /= n;
  g.weights = {1.0};
  g.means = {mean};
  g.covariances = {cov};
  g.log_likelihood = gmm_log_likelihood(g, x);
  return g;
}

// Weighted M-step for one component given responsibilities r.
void m_step(const Eigen::MatrixXd& x, const Eigen::VectorXd& r, double reg, double& weight, PoseVector& mean,
            Matrix5& cov)
{
  const double nk = r.sum();
  if (!(nk > 0.0)) {
    throw NumericError("GMM component lost all responsibility");
  }
  mean = (x.transpose() * r) / nk;
  cov.setZero();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const PoseVector d = x.row(i).transpose() - mean;
    cov.noalias() += r[i] * (d * d.transpose());
  }
  cov /= nk;
  cov.diagonal().array() += reg;
  weight = nk / static_cast<double>(x.rows());
}

Gmm em_two(const Eigen::MatrixXd& x, std::uint64_t seed, const GmmOptions& opts)
{
  const Eigen::Index n = x.rows();
  Rng rng = make_rng(seed, 0x6A33ULL);

  // k-means++ seeding: first center uniform, second proportional to squared distance.
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  const Eigen::Index c0 = pick(rng);
  Eigen::VectorXd d2(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d2[i] = (x.row(i) - x.row(c0)).squaredNorm();
  }
  Eigen::Index c1 = 0;
  const double total = d2.sum();
  if (total > 0.0) {
    const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
    double acc = 0.0;
    c1 = n - 1;
    for (Eigen::Index i = 0; i < n; ++i) {
      acc += d2[i];
      if (acc > u) {
        c1 = i;
        break;
      }
    }
  } else {
    c1 = (c0 + 1) % n;
  }

  Eigen::VectorXd r0(n);
  Eigen::VectorXd r1(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = (x.row(i) - x.row(c0)).squaredNorm();
    const double b = (x.row(i) - x.row(c1)).squaredNorm();
    r0[i] = a <= b ? 1.0 : 0.0;
    r1[i] = 1.0 - r0[i];
  }
  if (r0.sum() == 0.0 || r1.sum() == 0.0) {
    r0.setConstant(0.5);
    r1.setConstant(0.5);
  }

  Gmm g;
  g.k = 2;
  g.n_samples = n;
  g.weights.assign(2, 0.5);
  g.means.assign(2, PoseVector::Zero());
  g.covariances.assign(2, Matrix5::Identity());
  m_step(x, r0, opts.covariance_reg, g.weights[0], g.means[0], g.covariances[0]);
  m_step(x, r1, opts.covariance_reg, g.weights[1], g.means[1], g.covariances[1]);

  double prev = -std::numeric_limits<double>::infinity();
  bool converged = false;
  for (int it = 0; it < opts.max_iterations; ++it) {
    const Component a = prepare(g.means[0], g.covariances[0]);
    const Component b = prepare(g.means[1], g.covariances[1]);
    const double lw0 = std::log(g.weights[0]);
    const double lw1 = std::log(g.weights[1]);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const PoseVector xi = x.row(i).transpose();
      const double la = lw0 + log_density(a, xi);
      const double lb = lw1 + log_density(b, xi);
      const double lse = log_sum_exp(la, lb);
      ll += lse;
      r0[i] = std::exp(la - lse);
      r1[i] = std::exp(lb - lse);
    }
    g.ll_trace.push_back(ll);
    g.log_likelihood = ll;
    if (ll - prev < opts.tolerance) {
      converged = true;
      break;
    }
    prev = ll;
    m_step(x, r0, opts.covariance_reg, g.weights[0], g.means[0], g.covariances[0]);
    m_step(x, r1, opts.covariance_reg, g.weights[1], g.means[1], g.covariances[1]);
  }
  if (!converged) {
    g.log_likelihood = gmm_log_likelihood(g, x);
    g.ll_trace.push_back(g.log_likelihood);
  }
  return g;
}

}  // namespace

double gmm_log_likelihood(const Gmm& g, const Eigen::MatrixXd& samples)
{
  std::vector<Component> comps;
  std::vector<double> lw;
  for (int c = 0; c < g.k; ++c) {
    comps.push_back(prepare(g.means[c], g.covariances[c]));
    lw.push_back(std::log(g.weights[c]));
  }
  double ll = 0.0;
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    const PoseVector xi = samples.row(i).transpose();
    double acc = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < g.k; ++c) {
      acc = log_sum_exp(acc, lw[c] + log_density(comps[c], xi));
    }
    ll += acc;
  }
  return ll;
}

Gmm fit_gmm(const Eigen::MatrixXd& samples, int k, std::uint64_t seed, const GmmOptions& opts)
{
  check_samples(samples);
  if (k != 1 && k != 2) {
    throw ParameterError(fmt::format("GMM component count must be 1 or 2, got {}", k));
  }
  if (opts.restarts < 1 || opts.max_iterations < 1 || !(opts.covariance_reg >= 0.0)) {
    throw ParameterError("invalid GMM options");
  }
  const Eigen::MatrixXd x = sorted_rows(samples);
  if (k == 1) {
    return fit_single(x);
  }
  Gmm best;
  bool have = false;
  for (int r = 0; r < opts.restarts; ++r) {
    Gmm g = em_two(x, mix_seed(seed, static_cast<std::uint64_t>(r)), opts);
    if (!have || g.log_likelihood > best.log_likelihood) {
      best = std::move(g);
      have = true;
    }
  }
  return best;
}

int gmm_parameter_count(int k) { return k * (kPoseDim + kPoseDim * (kPoseDim + 1) / 2) + (k - 1); }

double aic(const Gmm& g, std::size_t n)
{
  if (n != g.n_samples) {
    throw ParameterError(fmt::format("AIC sample count {} does not match the fit ({})", n, g.n_samples));
  }
  return 2.0 * gmm_parameter_count(g.k) - 2.0 * g.log_likelihood;
}

bool is_multimodal(double aic1, double aic2, double threshold) { return aic2 < aic1 - threshold; }

namespace {

Pose mode_pose(const PoseVector& v)
{
  Pose p = vector_pose(v);
  p.lao = canonicalize_lao(p.lao);
  return p;
}

}  // namespace

ModeReport detect_modes(const Eigen::MatrixXd& samples, double threshold, std::uint64_t seed, const GmmOptions& opts)
{
  const Gmm g1 = fit_gmm(samples, 1, seed, opts);
  const Gmm g2 = fit_gmm(samples, 2, seed, opts);
  const std::size_t n = samples.rows();
  ModeReport r;
  r.aic1 = aic(g1, n);
  r.aic2 = aic(g2, n);
  r.threshold = threshold;
  r.multimodal = is_multimodal(r.aic1, r.aic2, threshold);
  r.single_mean = g1.means[0];
  r.single_pose = mode_pose(g1.means[0]);
  if (r.multimodal) {
    const int first = g2.weights[1] > g2.weights[0] ? 1 : 0;
    for (int c : {first, 1 - first}) {
      r.mode_vectors.push_back(g2.means[c]);
      r.mode_weights.push_back(g2.weights[c]);
      r.mode_poses.push_back(mode_pose(g2.means[c]));
    }
  } else {
    r.mode_vectors = {g1.means[0]};
    r.mode_weights = {1.0};
    r.mode_poses = {r.single_pose};
  }
  return r;
}

void to_json(nlohmann::json& j, const ModeReport& r)
{
  auto vec = [](const PoseVector& v) { return std::vector<double>(v.data(), v.data() + kPoseDim); };
  nlohmann::json vectors = nlohmann::json::array();
  for (const auto& v : r.mode_vectors) {
    vectors.push_back(vec(v));
  }
  j = nlohmann::json{{"label", r.multimodal ? "multi-modal" : "uni-modal"},
                     {"aic1", r.aic1},
                     {"aic2", r.aic2},
                     {"threshold", r.threshold},
                     {"mode_poses", r.mode_poses},
                     {"mode_vectors", vectors},
                     {"mode_weights", r.mode_weights},
                     {"single_pose", r.single_pose},
                     {"single_vector", vec(r.single_mean)}};
}

void from_json(const nlohmann::json& j, ModeReport& r)
{
  const std::string label = j.at("label").get<std::string>();
  if (label != "multi-modal" && label != "uni-modal") {
    throw FormatError("mode report label must be multi-modal or uni-modal, got " + label);
  }
  r.multimodal = label == "multi-modal";
  r.aic1 = j.at("aic1").get<double>();
  r.aic2 = j.at("aic2").get<double>();
  // JSON has no infinity; a null threshold means "never multi-modal".
  r.threshold = j.at("threshold").is_null() ? std::numeric_limits<double>::infinity()
                                             : j.at("threshold").get<double>();
  r.mode_poses = j.at("mode_poses").get<std::vector<Pose>>();
  r.mode_weights = j.at("mode_weights").get<std::vector<double>>();
  r.mode_vectors.clear();
  for (const auto& v : j.at("mode_vectors")) {
    const auto xs = v.get<std::vector<double>>();
    if (xs.size() != kPoseDim) {
      throw FormatError("mode vector must have 5 entries");
    }
    r.mode_vectors.push_back(Eigen::Map<const PoseVector>(xs.data()));
  }
  r.single_pose = j.at("single_pose").get<Pose>();
  const auto sv = j.at("single_vector").get<std::vector<double>>();
  if (sv.size() != kPoseDim) {
    throw FormatError("single vector must have 5 entries");
  }
  r.single_mean = Eigen::Map<const PoseVector>(sv.data());
}

}  // namespace ambireg
