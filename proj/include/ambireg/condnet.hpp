#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ambireg/drr.hpp"
#include "ambireg/geometry.hpp"
#include "ambireg/nn/layers.hpp"
#include "ambireg/nn/optim.hpp"
#include "ambireg/phantom.hpp"

namespace ambireg {

struct CondNetConfig {
  std::array<int, 3> volume_input_dims{32, 64, 32};  ///< (nx, ny, nz) after resampling
  std::array<int, 2> image_input_dims{64, 64};
  int blocks = 3;  ///< conv -> batchnorm -> dropout -> relu stages per branch
  std::vector<int> volume_channels{4, 8, 16};
  std::vector<int> image_channels{8, 16, 16};
  std::string image_pooling = "flatten";  ///< "flatten" keeps spatial layout; "gap" averages
  int fusion_hidden = 128;
  int cond_dim = 64;
  double dropout_rate = 0.1;
};

void validate(const CondNetConfig& cfg);

/// Two convolutional branches (3D for the volume, 2D for the projection) whose
/// features are concatenated and mapped to the condition vector, plus a
/// zero-initialized linear pose-regression head used only for pretraining.
class CondNet {
 public:
  CondNet(const CondNetConfig& cfg, std::uint64_t seed);

  /// volumes (N,1,nz,ny,nx), images (N,1,h,w) -> (N, cond_dim).
  nn::Tensor embed(const nn::Tensor& volumes, const nn::Tensor& images, nn::Mode mode);
  /// Backpropagates dL/d(condition) into the trunk parameters.
  void backward_embed(const nn::Tensor& grad_cond);

  nn::Tensor predict_pose(const nn::Tensor& cond);
  /// Returns dL/d(condition).
  nn::Tensor backward_head(const nn::Tensor& grad_pred);

  std::vector<nn::Parameter*> trunk_parameters();
  std::vector<nn::Parameter*> head_parameters();
  /// Trunk + head, including running statistics.
  std::vector<nn::Parameter*> all_parameters();
  static std::vector<nn::Parameter*> trainable(const std::vector<nn::Parameter*>& params);

  void reseed(std::uint64_t seed);
  const CondNetConfig& config() const { return cfg_; }

 private:
  CondNetConfig cfg_;
  nn::Sequential volume_branch_;
  nn::Sequential image_branch_;
  nn::Sequential fusion_;
  nn::Sequential head_;
  int volume_features_ = 0;
};

nn::Tensor volume_tensor(const std::vector<const Volume*>& volumes);
nn::Tensor image_tensor(const std::vector<const Image2D*>& images);

/// Resamples to the conditioning resolution if needed.
Volume prepare_volume(const Volume& v, const CondNetConfig& cfg);

struct TrainingSample {
  int volume_index = 0;
  Image2D image;
  PoseVector target = PoseVector::Zero();
};

/// Volumes are stored once at conditioning resolution; samples refer to them.
struct TrainingSet {
  std::vector<Volume> volumes;
  std::vector<TrainingSample> samples;
};

struct StageConfig {
  int epochs = 40;
  int batch_size = 32;
  double lr = 0.01;
  int decay_every = 100;
  double decay_factor = 0.1;
  double weight_decay = 1e-5;
  bool augment = true;
  /// Swaps each sample with probability 1/2 for its half-turn twin: volume
  /// rotated 180 degrees about y, same image, lao + 180. Off by default.
  bool half_turn = false;
};

struct Batch {
  nn::Tensor volumes;
  nn::Tensor images;
  nn::Tensor targets;  ///< (N, 5)
  std::vector<int> sample_ids;
};

/// Fixed shuffle per (seed, epoch); batch b covers positions [b*bs, (b+1)*bs).
std::vector<std::vector<int>> epoch_batches(std::size_t n_samples, int batch_size, std::uint64_t seed, int epoch);

/// Assembles a batch, applying the noise/contrast augmentation to both inputs
/// and the half-turn swap when enabled.
Batch make_batch(const TrainingSet& set, const std::vector<int>& ids, bool augment, std::uint64_t seed,
                 bool half_turn = false);

/// Seed for the randomness (augmentation, dropout) of one optimizer step.
std::uint64_t step_seed(std::uint64_t seed, int stage, int epoch, int batch);

/// One stage-1 epoch of MSE pose regression; returns the sample-weighted mean loss.
double pretrain_epoch(CondNet& net, nn::Adam& adam, const TrainingSet& set, const StageConfig& cfg,
                      std::uint64_t seed, int epoch);

/// Runs all stage-1 epochs with a fresh optimizer; returns per-epoch losses.
std::vector<double> pretrain(CondNet& net, const TrainingSet& set, const StageConfig& cfg, std::uint64_t seed);

/// Per-component squared error of the regression head over the set (eval mode,
/// no augmentation).
PoseVector evaluate_mse(CondNet& net, const TrainingSet& set, int batch_size = 32);

}  // namespace ambireg
