// Acceptance checks. One PASS/FAIL line per criterion; exit status is nonzero
// when any selected criterion fails.
//
//   ambireg_acceptance [--criterion N]... [--workdir DIR] [--seeds K]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <fmt/format.h>

#include "ambireg/commands.hpp"
#include "ambireg/error.hpp"
#include "support/gradcheck.hpp"
#include "support/toy_task.hpp"

using namespace ambireg;
using namespace ambireg::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0)
{
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void progress(const std::string& msg) { std::cerr << "  .. " << msg << std::endl; }

nn::Tensor random_cond(int n, int dim, Rng& rng) { return random_tensor({n, dim}, rng); }

// ---------------------------------------------------------------- 1

Outcome invertibility()
{
  double worst = 0.0;
  int models = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    // Untrained: default architecture with random weights in every layer.
    FlowModel untrained(FlowConfig{}, seed);
    randomize_parameters(untrained.parameters(), 0.15, seed);
    // Trained: a short run on the toy task.
    FlowModel trained(toy_flow_config(), seed);
    train_toy(trained, ToyTask{}, 60, seed);

    for (FlowModel* flow : {&untrained, &trained}) {
      Rng rng = make_rng(seed, models);
      const int cdim = flow->config().cond_dim;
      for (int i = 0; i < 1000; ++i) {
        PoseVector x;
        for (int d = 0; d < kPoseDim; ++d) x[d] = 1.5 * std::normal_distribution<double>()(rng);
        Eigen::VectorXd c(cdim);
        for (int d = 0; d < cdim; ++d) c[d] = std::normal_distribution<double>()(rng);
        const PoseVector z = flow_forward(*flow, x, c).first;
        worst = std::max(worst, (flow_inverse(*flow, z, c) - x).cwiseAbs().maxCoeff());
      }
      ++models;
    }
  }
  return {worst < 1e-10, fmt::format("max |inverse(forward(x)) - x| = {:.3e} over {} models x 1000 pairs", worst,
                                     models)};
}

// ---------------------------------------------------------------- 2

Outcome logdet_exactness()
{
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    FlowModel flow(FlowConfig{}, 1000 + seed);
    randomize_parameters(flow.parameters(), 0.15, seed);
    Rng rng = make_rng(seed, 77);
    PoseVector x;
    for (int d = 0; d < kPoseDim; ++d) x[d] = std::normal_distribution<double>()(rng);
    Eigen::VectorXd c(flow.config().cond_dim);
    for (int d = 0; d < c.size(); ++d) c[d] = std::normal_distribution<double>()(rng);

    const double h = 1e-6;
    Eigen::Matrix<double, 5, 5> jac;
    for (int d = 0; d < kPoseDim; ++d) {
      PoseVector up = x;
      PoseVector down = x;
      up[d] += h;
      down[d] -= h;
      jac.col(d) = (flow_forward(flow, up, c).first - flow_forward(flow, down, c).first).transpose() / (2.0 * h);
    }
    const double analytic = flow_forward(flow, x, c).second;
    const double numeric = std::log(std::abs(jac.determinant()));
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic)));
  }
  return {worst < 1e-5, fmt::format("max |logdet - log|det J_fd|| / max(1, |logdet|) = {:.3e} over 100 models", worst)};
}

// ---------------------------------------------------------------- 3

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Outcome gradients()
{
  GradReport total;
  int checks = 0;
  auto record = [&](const GradReport& r, int config) {
    total.add(r.worst, fmt::format("config {} {}", config, r.where));
    ++checks;
  };
  constexpr int kConfigs = 20;
  for (int cfg_i = 0; cfg_i < kConfigs; ++cfg_i) {
    const std::uint64_t seed = 500 + cfg_i;
    Rng rng = make_rng(seed, 1);
    const int n = uniform_int(rng, 2, 4);
    {
      nn::Dense layer(uniform_int(rng, 1, 6), uniform_int(rng, 1, 6), "dense", rng);
      const auto params = nn::parameters_of(layer);
      const int in = params[0]->value.dim(1);
      record(check_layer_gradients(layer, random_tensor({n, in}, rng), nn::Mode::train, seed), cfg_i);
    }
    {
      const int cin = uniform_int(rng, 1, 2);
      const std::array<int, 3> k{uniform_int(rng, 1, 3), uniform_int(rng, 1, 3), uniform_int(rng, 1, 3)};
      const std::array<int, 3> s{uniform_int(rng, 1, 2), uniform_int(rng, 1, 2), uniform_int(rng, 1, 2)};
      const std::array<int, 3> p{uniform_int(rng, 0, 1), uniform_int(rng, 0, 1), uniform_int(rng, 0, 1)};
      nn::Conv3d layer(cin, uniform_int(rng, 1, 3), k, s, p, "conv3d", rng);
      const nn::Tensor x = random_tensor({n, cin, uniform_int(rng, 3, 5), uniform_int(rng, 3, 5), uniform_int(rng, 3, 5)}, rng);
      record(check_layer_gradients(layer, x, nn::Mode::train, seed), cfg_i);
    }
    {
      const int cin = uniform_int(rng, 1, 2);
      nn::Conv2d layer(cin, uniform_int(rng, 1, 3), uniform_int(rng, 1, 3), uniform_int(rng, 1, 2),
                       uniform_int(rng, 0, 1), "conv2d", rng);
      const nn::Tensor x = random_tensor({n, cin, uniform_int(rng, 3, 6), uniform_int(rng, 3, 6)}, rng);
      record(check_layer_gradients(layer, x, nn::Mode::train, seed), cfg_i);
    }
    {
      const int c = uniform_int(rng, 1, 3);
      nn::BatchNorm layer(c, "batchnorm");
      for (double& g : layer.gamma().value.values()) g = 0.5 + std::abs(std::normal_distribution<double>()(rng));
      for (double& b : layer.beta().value.values()) b = std::normal_distribution<double>()(rng);
      const bool spatial = cfg_i % 2 == 0;
      const nn::Tensor x = spatial ? random_tensor({n, c, 2, 3}, rng) : random_tensor({n + 2, c}, rng);
      record(check_layer_gradients(layer, x, nn::Mode::train, seed), cfg_i);
      record(check_layer_gradients(layer, x, nn::Mode::eval, seed), cfg_i);
    }
    {
      nn::Dropout layer(0.1 * uniform_int(rng, 1, 5));
      record(check_layer_gradients(layer, random_tensor({n, 7}, rng), nn::Mode::train, seed), cfg_i);
    }
    {
      nn::Relu layer;
      record(check_layer_gradients(layer, random_tensor({n, 6}, rng, 1.0, 0.01), nn::Mode::train, seed), cfg_i);
    }
    {
      nn::GlobalAvgPool layer;
      record(check_layer_gradients(layer, random_tensor({n, 2, 3, 2}, rng), nn::Mode::train, seed), cfg_i);
    }
    {
      nn::Flatten layer;
      record(check_layer_gradients(layer, random_tensor({n, 2, 3}, rng), nn::Mode::train, seed), cfg_i);
    }
    {
      // Full NLL objective: flow parameters, inputs and condition.
      FlowConfig fc;
      fc.depth = uniform_int(rng, 1, 4);
      fc.hidden = uniform_int(rng, 3, 12);
      fc.hidden_layers = uniform_int(rng, 1, 2);
      fc.passive_dims = uniform_int(rng, 1, 4);
      fc.cond_dim = uniform_int(rng, 1, 5);
      fc.clamp_alpha = 0.5 + 2.0 * std::uniform_real_distribution<double>()(rng);
      FlowModel flow(fc, seed);
      randomize_parameters(flow.parameters(), 0.3, seed);
      nn::Tensor x = random_tensor({n, kPoseDim}, rng);
      nn::Tensor c = random_cond(n, fc.cond_dim, rng);
      auto loss = [&]() { return nll_loss(flow, x, c); };
      nn::zero_grad(flow.parameters());
      nn::Tensor gc;
      nll_loss_backward(flow, x, c, &gc);
      GradReport r;
      for (auto* p : flow.parameters()) {
        const std::vector<double> analytic(p->grad.values().begin(), p->grad.values().end());
        r.add(max_rel_error(analytic, numeric_gradient(p->value.values(), loss, 1e-5)), "nll." + p->name);
      }
      r.add(max_rel_error(gc.values(), numeric_gradient(c.values(), loss, 1e-5)), "nll.cond");
      record(r, cfg_i);
    }
    if (cfg_i % 5 == 0) {
      // Joint objective through the conditioning network.
      CondNetConfig cc;
      cc.volume_input_dims = {5, 6, 5};
      cc.image_input_dims = {6, 5};
      cc.blocks = 2;
      cc.volume_channels = {2, 2};
      cc.image_channels = {2, 2};
      cc.fusion_hidden = 5;
      cc.cond_dim = 5;
      cc.image_pooling = cfg_i % 10 == 0 ? "flatten" : "gap";
      FlowConfig fc;
      fc.depth = 2;
      fc.hidden = 6;
      fc.cond_dim = 5;
      RegistrationModel model(cc, fc, seed);
      randomize_parameters(model.flow.parameters(), 0.3, seed);
      const nn::Tensor vol = random_tensor({n, 1, 5, 6, 5}, rng);
      const nn::Tensor img = random_tensor({n, 1, 5, 6}, rng);
      const nn::Tensor x = random_tensor({n, kPoseDim}, rng);
      auto loss = [&]() {
        model.condnet.reseed(seed);
        return nll_loss(model.flow, x, model.condnet.embed(vol, img, nn::Mode::train));
      };
      const auto params = model.stage2_parameters();
      nn::zero_grad(params);
      model.condnet.reseed(seed);
      const nn::Tensor c = model.condnet.embed(vol, img, nn::Mode::train);
      nn::Tensor gc;
      nll_loss_backward(model.flow, x, c, &gc);
      model.condnet.backward_embed(gc);
      GradReport r = check_parameter_gradients(params, loss, 1e-5);
      r.where = "joint." + r.where;
      record(r, cfg_i);
    }
  }
  return {total.worst < 1e-4, fmt::format("worst relative error {:.3e} ({}) over {} checks in {} configurations",
                                          total.worst, total.where, checks, kConfigs)};
}

// ---------------------------------------------------------------- 4

double chord_length(const Eigen::Vector3d& src, const Eigen::Vector3d& dir, double edge)
{
  double t0 = -1e300;
  double t1 = 1e300;
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (src[a] < 0.0 || src[a] > edge) return 0.0;
      continue;
    }
    double ta = -src[a] / dir[a];
    double tb = (edge - src[a]) / dir[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return t1 > t0 ? t1 - t0 : 0.0;
}

Outcome renderer()
{
  // Unit-density cube, 80 mm on a side, default camera and step.
  Volume cube;
  cube.dims = {41, 41, 41};
  cube.spacing = {2.0, 2.0, 2.0};
  cube.data.assign(cube.size(), 1.0f);
  const CameraConfig cam;
  double worst = 0.0;
  int pixels = 0;
  for (const Pose& p : {Pose{}, Pose{6.0, -3.0, 9.0, 17.0, -11.0}, Pose{-12.0, 5.0, 2.0, 195.0, 8.0}}) {
    const Image2D img = render_drr(cube, p, cam);
    const RigidTransform tf = pose_to_transform(p, cube.center_mm());
    const Eigen::Vector3d c = cube.center_mm();
    auto map = [&](const Eigen::Vector3d& q) -> Eigen::Vector3d { return tf.rotation * q + tf.translation; };
    const Eigen::Vector3d src = map(c - Eigen::Vector3d(cam.source_to_isocenter_mm, 0, 0));
    const double w = cam.detector_px[0];
    const double h = cam.detector_px[1];
    for (int row = 0; row < cam.detector_px[1]; ++row) {
      for (int col = 0; col < cam.detector_px[0]; ++col) {
        const Eigen::Vector3d pix =
            map(c + Eigen::Vector3d(cam.source_to_detector_mm - cam.source_to_isocenter_mm,
                                    (row + 0.5 - h / 2) * cam.pixel_pitch_mm, (col + 0.5 - w / 2) * cam.pixel_pitch_mm));
        const double chord = chord_length(src, (pix - src).normalized(), 80.0);
        const double got = img.at(col, row);
        const double err = chord > 0.0 ? std::abs(got - chord) / chord : std::abs(got);
        worst = std::max(worst, err);
        ++pixels;
      }
    }
  }

  PhantomSpec spec;
  spec.seed = 3;
  const Volume sym = make_phantom(spec);
  PoseSamplerConfig sampler;
  sampler.seed = 99;
  double diff = 0.0;
  double mean = 0.0;
  for (int i = 0; i < 20; ++i) {
    const Pose p = sample_pose(sampler, i);
    Pose q = p;
    q.lao = canonicalize_lao(p.lao + 180.0);
    const Image2D a = render_drr(sym, p, cam);
    diff += l1_image_distance(a, render_drr(sym, q, cam));
    mean += a.mean();
  }
  const double flip = diff / mean;
  return {worst < 0.01 && flip < 0.02,
          fmt::format("cube: worst per-pixel relative error {:.2e} over {} pixels; symmetric flip L1 / mean = {:.2e}",
                      worst, pixels, flip)};
}

// ---------------------------------------------------------------- 5

// Frozen decision bits for the 1000 (aic1, aic2, threshold) triples produced by
// the LCG below, computed once by an independent script.
constexpr const char* kAicOracleHex =
    "87ee8ffddfceda1f73a9bf7b2e539373f4d6dfdef9faf9d8fe25fdfae9ec5eff25fbccf1ed2c7eaa79ff2557ffeb3f4bbfeafcc5ff9cad"
    "17c3bce957b17ffaf52f7959ab7356eaebffdbb74ff3fc6ab3d637bf19b7dbf56694f999e2fb5e5f65f7bd2caeef324e7ebaf3ff3bf19c"
    "d6f986765fdffd75fcf625f6537faa";

Outcome gmm_suite()
{
  std::vector<std::string> fails;
  Rng rng(31);
  std::normal_distribution<double> normal(0.0, 1.0);

  // k=1 against a two-pass closed form.
  Eigen::MatrixXd x(2000, kPoseDim);
  for (int i = 0; i < x.rows(); ++i) {
    const double shared = normal(rng);
    for (int d = 0; d < kPoseDim; ++d) x(i, d) = 0.1 * d + 0.2 * (d + 1) * normal(rng) + 0.4 * shared;
  }
  const Gmm g1 = fit_gmm(x, 1, 0);
  const PoseVector mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
  const Matrix5 cov = centered.transpose() * centered / double(x.rows());
  const Matrix5 inv = cov.inverse();
  const double logdet = std::log(cov.determinant());
  double ll = 0.0;
  for (int i = 0; i < x.rows(); ++i) {
    const Eigen::Matrix<double, 5, 1> v = centered.row(i).transpose();
    ll += -0.5 * v.dot(inv * v) - 0.5 * logdet - 2.5 * std::log(2.0 * std::numbers::pi);
  }
  const double k1_err = std::max({(g1.means[0] - mean).cwiseAbs().maxCoeff(),
                                  (g1.covariances[0] - cov).cwiseAbs().maxCoeff(),
                                  std::abs(g1.log_likelihood - ll) / std::abs(ll)});
  if (k1_err > 1e-10) fails.push_back(fmt::format("k=1 error {:.2e}", k1_err));

  // Two-cluster recovery and EM monotonicity.
  double worst_mean = 0.0;
  double worst_weight = 0.0;
  double worst_drop = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    PoseVector m0;
    PoseVector m1;
    PoseVector sd;
    for (int d = 0; d < kPoseDim; ++d) {
      m0[d] = normal(rng) * 0.3;
      sd[d] = 0.05 + 0.1 * std::abs(normal(rng));
      m1[d] = m0[d] + (d == 3 ? 1.6 : 0.0);
    }
    const double w0 = 0.2 + 0.15 * trial;
    std::bernoulli_distribution first(w0);
    Eigen::MatrixXd s(4096, kPoseDim);
    for (int i = 0; i < s.rows(); ++i) {
      const bool a = first(rng);
      for (int d = 0; d < kPoseDim; ++d) s(i, d) = (a ? m0[d] : m1[d]) + sd[d] * normal(rng);
    }
    const Gmm g = fit_gmm(s, 2, trial);
    const int a = g.means[0][3] < g.means[1][3] ? 0 : 1;
    worst_weight = std::max(worst_weight, std::abs(g.weights[a] - w0));
    for (int d = 0; d < kPoseDim; ++d) {
      worst_mean = std::max(worst_mean, std::abs(g.means[a][d] - m0[d]) / sd[d]);
      worst_mean = std::max(worst_mean, std::abs(g.means[1 - a][d] - m1[d]) / sd[d]);
    }
    // Overlapping clusters exercise many EM iterations.
    Eigen::MatrixXd o(1500, kPoseDim);
    for (int i = 0; i < o.rows(); ++i) {
      const bool b = first(rng);
      for (int d = 0; d < kPoseDim; ++d) o(i, d) = (b ? 0.0 : 0.5) + 0.4 * normal(rng);
    }
    for (const Gmm& h : {g, fit_gmm(o, 2, trial + 10)}) {
      for (std::size_t i = 1; i < h.ll_trace.size(); ++i) {
        worst_drop = std::max(worst_drop, (h.ll_trace[i - 1] - h.ll_trace[i]) / std::max(1.0, std::abs(h.ll_trace[i - 1])));
      }
    }
  }
  if (worst_mean > 0.1) fails.push_back(fmt::format("mean error {:.3f} sigma", worst_mean));
  if (worst_weight > 0.02) fails.push_back(fmt::format("weight error {:.3f}", worst_weight));
  if (worst_drop > 1e-9) fails.push_back(fmt::format("EM log-likelihood drop {:.2e}", worst_drop));

  // Decision rule against the frozen oracle.
  std::uint64_t state = 20201;
  auto next = [&]() {
    state = state * 6364136223846793005ULL + 1442695040888963407ULL;
    return state >> 33;
  };
  const double thresholds[] = {0.0, 1000.0, 2000.0, 2000.5};
  int mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    const double aic1 = double(next() % 8001) - 4000.0;
    const double aic2 = aic1 - double(next() % 41) * 100.0 + double(int(next() % 3) - 1) * 0.5;
    const double thr = thresholds[next() % 4];
    const int nibble = std::stoi(std::string(1, kAicOracleHex[i / 4]), nullptr, 16);
    const bool expect = (nibble >> (3 - i % 4)) & 1;
    mismatches += is_multimodal(aic1, aic2, thr) != expect;
  }
  if (mismatches) fails.push_back(fmt::format("{} decision mismatches", mismatches));

  return {fails.empty(),
          fmt::format("k=1 err {:.1e}; recovery mean err {:.3f} sigma, weight err {:.3f}; EM max drop {:.1e}; "
                      "decision mismatches {}/1000",
                      k1_err, worst_mean, worst_weight, worst_drop, mismatches)};
}

// ---------------------------------------------------------------- 6

Outcome toy_convergence()
{
  const ToyTask task;
  // Generating-mixture mass on the + side of the midpoint between the clusters.
  const double z = task.separation / task.sigma;
  const double phi = 0.5 * std::erfc(-z / std::sqrt(2.0));
  const double truth[2] = {phi, task.weight_plus * phi + (1.0 - task.weight_plus) * (1.0 - phi)};
  double worst_gap = -1e9;
  double worst_weight = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    FlowModel flow(toy_flow_config(), seed);
    train_toy(flow, task, 500, seed);
    worst_gap = std::max(worst_gap, toy_heldout_nll(flow, task, 20000, seed) - toy_expected_entropy(task));
    for (int c = 0; c < 2; ++c) {
      Rng rng = make_rng(seed, 40 + c);
      const nn::Tensor latent = random_tensor({8192, kPoseDim}, rng);
      const nn::Tensor x = flow.inverse(latent, nn::Tensor({8192, 1}, double(c)));
      double plus = 0.0;
      for (int i = 0; i < 8192; ++i) plus += x[std::size_t(i) * kPoseDim + task.split_dim] > task.base_mean[task.split_dim];
      worst_weight = std::max(worst_weight, std::abs(plus / 8192.0 - truth[c]));
    }
  }
  return {worst_gap < 0.1 && worst_weight <= 0.05,
          fmt::format("500 steps, 3 seeds: worst NLL - entropy = {:.4f} nat; worst cluster-weight error {:.3f}",
                      worst_gap, worst_weight)};
}

// ---------------------------------------------------------------- 7

double angle_gap(double a, double b)
{
  const double d = std::fmod(std::abs(a - b), 360.0);
  return std::min(d, 360.0 - d);
}

Outcome end_to_end(const fs::path& workdir, int n_seeds)
{
  int sym_total = 0;
  int sym_multi = 0;
  int marked_total = 0;
  int marked_uni = 0;
  int multi_cases = 0;
  double closer_sum = 0.0;
  double single_sum = 0.0;
  int sym_multi_located = 0;
  std::vector<std::string> per_seed;
  for (int s = 0; s < n_seeds; ++s) {
    RunConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(s);
    const fs::path root = workdir / fmt::format("seed_{}", s);
    fs::remove_all(root);
    const auto t0 = std::chrono::steady_clock::now();
    const GeneratedData data = cmd_gen_data(cfg, root / "data");
    TrainOptions opts;
    opts.resume = false;
    opts.log = [s](const std::string& line) {
      int epoch = 0;
      if (std::sscanf(line.c_str(), "stage%*d epoch %d", &epoch) == 1 && epoch % 20 != 0) return;
      progress(fmt::format("seed {}: {}", s, line));
    };
    const TrainResult trained = cmd_train(cfg, data.train_manifest, root / "run", opts);
    const EvalSummary summary = cmd_eval(cfg, trained.model_stem, data.test_manifest, root / "eval");
    const auto cases = read_cases_jsonl(root / "eval" / "cases.jsonl");
    for (const auto& c : cases) {
      if (c.marked) {
        ++marked_total;
        marked_uni += !c.report.multimodal;
      } else {
        ++sym_total;
        sym_multi += c.report.multimodal;
      }
      if (!c.report.multimodal) continue;
      ++multi_cases;
      closer_sum += c.closer_l1;
      single_sum += c.single_l1;
      if (!c.marked) {
        const double t = c.true_pose.lao;
        const double f = canonicalize_lao(t + 180.0);
        const double a = c.report.mode_poses[0].lao;
        const double b = c.report.mode_poses[1].lao;
        const bool ok = (angle_gap(a, t) <= 5.0 && angle_gap(b, f) <= 5.0) ||
                        (angle_gap(b, t) <= 5.0 && angle_gap(a, f) <= 5.0);
        sym_multi_located += ok;
      }
    }
    const auto& sym = summary.get("symmetric");
    const auto& mk = summary.get("marked");
    per_seed.push_back(fmt::format("seed {}: sym multi {}/{}, marked multi {}/{}, {:.0f} s", s, sym.n_multimodal,
                                   sym.n_total, mk.n_multimodal, mk.n_total, seconds_since(t0)));
    progress(per_seed.back());
  }
  const double sym_frac = sym_total ? double(sym_multi) / sym_total : 0.0;
  const double marked_frac = marked_total ? double(marked_uni) / marked_total : 0.0;
  const double closer = multi_cases ? closer_sum / multi_cases : NAN;
  const double single = multi_cases ? single_sum / multi_cases : NAN;
  const double located = sym_multi ? double(sym_multi_located) / sym_multi : 0.0;
  const bool a_ok = sym_frac >= 0.7 && marked_frac >= 0.7;
  const bool b_ok = multi_cases > 0 && closer < single;
  const bool c_ok = sym_multi > 0 && located >= 0.6;
  std::string detail = fmt::format(
      "(a) symmetric multi-modal {:.1f}% ({}/{}), marked uni-modal {:.1f}% ({}/{}) {}; "
      "(b) closer-mode L1 {:.4f} vs single-Gaussian L1 {:.4f} over {} multi-modal cases {}; "
      "(c) lao modes at truth/truth+180 within 5 deg: {:.1f}% of {} {}",
      100 * sym_frac, sym_multi, sym_total, 100 * marked_frac, marked_uni, marked_total, a_ok ? "ok" : "FAIL",
      closer, single, multi_cases, b_ok ? "ok" : "FAIL", 100 * located, sym_multi, c_ok ? "ok" : "FAIL");
  for (const auto& line : per_seed) detail += " | " + line;
  return {a_ok && b_ok && c_ok, detail};
}

// ---------------------------------------------------------------- 8

std::map<std::string, std::string> file_tree(const fs::path& root)
{
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    const std::string rel = fs::relative(e.path(), root).string();
    if (!e.is_regular_file() || rel.rfind("logs", 0) == 0) continue;
    std::ifstream in(e.path(), std::ios::binary);
    out[rel] = std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return out;
}

Outcome determinism(const fs::path& workdir)
{
  RunConfig cfg;
  cfg.seed = 17;
  cfg.stage1.epochs = 2;
  cfg.stage2.epochs = 3;
  const fs::path root = workdir / "determinism";
  fs::remove_all(root);

  const GeneratedData a = cmd_gen_data(cfg, root / "data_a");
  cmd_gen_data(cfg, root / "data_b");
  const auto tree_a = file_tree(root / "data_a");
  const bool data_same = tree_a == file_tree(root / "data_b");
  progress(fmt::format("gen-data: {} files, identical {}", tree_a.size(), data_same));

  TrainOptions fresh;
  fresh.resume = false;
  cmd_train(cfg, a.train_manifest, root / "run_a", fresh);
  cmd_train(cfg, a.train_manifest, root / "run_b", fresh);
  const auto run_a = file_tree(root / "run_a");
  const bool train_same = run_a == file_tree(root / "run_b");
  progress(fmt::format("train: {} files, identical {}", run_a.size(), train_same));

  TrainOptions part;
  part.stop_after = 3;
  cmd_train(cfg, a.train_manifest, root / "run_c", part);
  cmd_train(cfg, a.train_manifest, root / "run_c");
  const bool resume_same = run_a == file_tree(root / "run_c");
  progress(fmt::format("resume after 3 epochs: identical {}", resume_same));

  return {data_same && train_same && resume_same,
          fmt::format("gen-data byte-identical: {}; train byte-identical: {}; resumed == uninterrupted: {}",
                      data_same, train_same, resume_same)};
}

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Acceptance checks"};
  std::vector<int> selected;
  std::string workdir = (fs::temp_directory_path() / "ambireg_acceptance").string();
  int seeds = 3;
  app.add_option("--criterion", selected, "Criterion number (1-8); repeatable, default all")
      ->check(CLI::Range(1, 8));
  app.add_option("--workdir", workdir, "Scratch directory for pipeline runs");
  app.add_option("--seeds", seeds, "Seeds for the end-to-end criterion")->check(CLI::Range(3, 100));
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8};

  const std::map<int, std::pair<std::string, std::function<Outcome()>>> checks{
      {1, {"invertibility", invertibility}},
      {2, {"log-determinant exactness", logdet_exactness}},
      {3, {"gradient suite", gradients}},
      {4, {"renderer accuracy", renderer}},
      {5, {"GMM/AIC suite", gmm_suite}},
      {6, {"toy-flow convergence", toy_convergence}},
      {7, {"end-to-end ambiguity reproduction", [&] { return end_to_end(workdir, seeds); }}},
      {8, {"determinism", [&] { return determinism(workdir); }}},
  };

  bool all = true;
  for (int id : selected) {
    const auto& [name, fn] = checks.at(id);
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = fn();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    std::cout << fmt::format("criterion {} [{}]: {} ({:.1f} s) {}", id, name, out.pass ? "PASS" : "FAIL",
                             seconds_since(t0), out.detail)
              << std::endl;
    all = all && out.pass;
  }
  return all ? 0 : 1;
}
