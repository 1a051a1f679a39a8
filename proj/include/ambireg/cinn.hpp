#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "ambireg/condnet.hpp"
#include "ambireg/geometry.hpp"
#include "ambireg/nn/checkpoint.hpp"
#include "ambireg/nn/layers.hpp"
#include "ambireg/nn/optim.hpp"

namespace ambireg {

/// (2 alpha / pi) * atan(s / alpha): odd, increasing, bounded by alpha.
double soft_clamp(double s, double alpha = 1.9);
double soft_clamp_derivative(double s, double alpha = 1.9);

struct FlowConfig {
  int depth = 8;
  int hidden = 64;
  int hidden_layers = 2;
  double clamp_alpha = 1.9;
  int passive_dims = 2;
  int cond_dim = 64;
};

void validate(const FlowConfig& cfg);

using Permutation = std::array<int, kPoseDim>;

/// Affine coupling on a permuted 5-vector: the first passive_dims entries pass
/// through and, together with the condition, drive the scale/shift of the rest.
class CouplingBlock {
 public:
  CouplingBlock(const FlowConfig& cfg, const Permutation& perm, const std::string& name, Rng& rng);

  /// x (N,5), cond (N,C) -> y (N,5); adds the block log-determinant to logdet.
  nn::Tensor forward(const nn::Tensor& x, const nn::Tensor& cond, std::vector<double>& logdet);
  /// Returns dL/dx and accumulates dL/dcond into grad_cond.
  nn::Tensor backward(const nn::Tensor& grad_y, const std::vector<double>& grad_logdet, nn::Tensor& grad_cond);
  nn::Tensor inverse(const nn::Tensor& y, const nn::Tensor& cond);

  const Permutation& permutation() const { return perm_; }
  nn::Sequential& scale_net() { return s_net_; }
  nn::Sequential& shift_net() { return t_net_; }

 private:
  void subnets(const nn::Tensor& passive, const nn::Tensor& cond, nn::Tensor& s_raw, nn::Tensor& t, nn::Mode mode);

  int passive_;
  int active_;
  double alpha_;
  Permutation perm_;
  nn::Sequential s_net_;
  nn::Sequential t_net_;
  // forward cache
  nn::Tensor active_in_;
  nn::Tensor s_raw_;
  nn::Tensor s_;
};

class FlowModel {
 public:
  struct Output {
    nn::Tensor z;                 ///< (N, 5)
    std::vector<double> logdet;   ///< (N)
  };

  /// Permutations are drawn from the seed; all subnet output layers start at zero.
  FlowModel(const FlowConfig& cfg, std::uint64_t seed);
  /// Rebuilds a model with explicit permutations (checkpoint loading).
  FlowModel(const FlowConfig& cfg, const std::vector<Permutation>& perms, std::uint64_t seed);

  Output forward(const nn::Tensor& x, const nn::Tensor& cond);
  /// Backward of the last forward. Returns (dL/dx, dL/dcond).
  std::pair<nn::Tensor, nn::Tensor> backward(const nn::Tensor& grad_z, const std::vector<double>& grad_logdet);
  nn::Tensor inverse(const nn::Tensor& z, const nn::Tensor& cond);

  std::vector<nn::Parameter*> parameters();
  std::vector<Permutation> permutations() const;
  const FlowConfig& config() const { return cfg_; }
  std::vector<CouplingBlock>& blocks() { return blocks_; }

 private:
  FlowConfig cfg_;
  std::vector<CouplingBlock> blocks_;
  int batch_ = 0;
};

/// Single-sample conveniences.
std::pair<PoseVector, double> flow_forward(FlowModel& flow, const PoseVector& x, const Eigen::VectorXd& cond);
PoseVector flow_inverse(FlowModel& flow, const PoseVector& z, const Eigen::VectorXd& cond);

/// Mean of 0.5|z|^2 - logdet plus (5/2) ln(2 pi): the exact negative
/// log-density under a standard-normal latent.
double nll_loss(FlowModel& flow, const nn::Tensor& x, const nn::Tensor& cond);

/// nll_loss plus backward: accumulates flow parameter gradients and, when
/// grad_cond is non-null, stores dL/dcond.
double nll_loss_backward(FlowModel& flow, const nn::Tensor& x, const nn::Tensor& cond, nn::Tensor* grad_cond);

nn::Tensor rows_to_tensor(const std::vector<PoseVector>& rows);

/// Conditioning network and flow trained together.
struct RegistrationModel {
  RegistrationModel(const CondNetConfig& ccfg, const FlowConfig& fcfg, std::uint64_t seed);
  RegistrationModel(CondNet cn, FlowModel fm) : condnet(std::move(cn)), flow(std::move(fm)) {}

  CondNet condnet;
  FlowModel flow;

  /// Trunk + flow (the regression head is left out after pretraining).
  std::vector<nn::Parameter*> stage2_parameters();
};

/// One stage-2 epoch of joint maximum-likelihood training; returns the
/// sample-weighted mean NLL.
double stage2_epoch(RegistrationModel& model, nn::Adam& adam, const TrainingSet& set, const StageConfig& cfg,
                    std::uint64_t seed, int epoch);

/// Flags runs whose epoch loss exceeds 10x |initial| for 3 consecutive epochs.
class DivergenceMonitor {
 public:
  /// Returns true once the run counts as diverged.
  bool update(double epoch_loss);

 private:
  bool have_initial_ = false;
  double initial_ = 0.0;
  int strikes_ = 0;
};

/// All stage-2 epochs with a fresh optimizer. Throws TrainingError on divergence
/// (after calling on_diverge, which may dump a checkpoint and return its path).
std::vector<double> train_stage2(RegistrationModel& model, const TrainingSet& set, const StageConfig& cfg,
                                 std::uint64_t seed,
                                 const std::function<std::string(int epoch)>& on_diverge = {});

/// Draws z ~ N(0, I) and maps each through the inverse flow under a single
/// eval-mode condition. Rows are pose vectors with canonicalized lao.
Eigen::MatrixXd sample_posterior(RegistrationModel& model, const Volume& volume, const Image2D& image,
                                 int n_samples, std::uint64_t seed);

/// Same, for an already computed condition vector.
Eigen::MatrixXd sample_flow(FlowModel& flow, const Eigen::VectorXd& cond, int n_samples, std::uint64_t seed);

/// The normalized lao component with its angle mapped into (-90, 270].
double canonical_lao_component(double v);

Eigen::VectorXd condition_vector(RegistrationModel& model, const Volume& volume, const Image2D& image);

/// Architecture, permutations and all parameters (including running statistics).
nn::Checkpoint model_checkpoint(RegistrationModel& model);
RegistrationModel model_from_checkpoint(const nn::Checkpoint& ckpt);
void save_model(RegistrationModel& model, const std::filesystem::path& stem);
RegistrationModel load_model(const std::filesystem::path& stem);

/// Copies named tensors into parameters (prefix + name). Missing names throw FormatError.
void load_parameters(const nn::Checkpoint& ckpt, const std::string& prefix, const std::vector<nn::Parameter*>& params);
void store_parameters(nn::Checkpoint& ckpt, const std::string& prefix, const std::vector<nn::Parameter*>& params);

}  // namespace ambireg
