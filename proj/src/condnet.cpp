#include "ambireg/condnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "ambireg/error.hpp"
#include "ambireg/rng.hpp"

namespace ambireg {

using nn::Mode;
using nn::Tensor;

void validate(const CondNetConfig& cfg)
{
  if (cfg.blocks <= 0 || static_cast<int>(cfg.volume_channels.size()) != cfg.blocks ||
      static_cast<int>(cfg.image_channels.size()) != cfg.blocks) {
    throw ConfigError("condnet channel lists must have one entry per block");
  }
  if (cfg.cond_dim < kPoseDim) {
    throw ConfigError(fmt::format("condnet cond_dim must be >= {}", kPoseDim));
  }
  if (cfg.image_pooling != "flatten" && cfg.image_pooling != "gap") {
    throw ConfigError("condnet image_pooling must be \"flatten\" or \"gap\"");
  }
  if (!(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0) || cfg.fusion_hidden <= 0) {
    throw ConfigError("condnet dropout_rate must be in [0,1) and fusion_hidden positive");
  }
  for (int c : cfg.volume_channels) {
    if (c <= 0) throw ConfigError("condnet channels must be positive");
  }
  for (int c : cfg.image_channels) {
    if (c <= 0) throw ConfigError("condnet channels must be positive");
  }
  for (int d : cfg.volume_input_dims) {
    if (d < 2) throw ConfigError("condnet volume_input_dims must be >= 2");
  }
  for (int d : cfg.image_input_dims) {
    if (d < 2) throw ConfigError("condnet image_input_dims must be >= 2");
  }
}

CondNet::CondNet(const CondNetConfig& cfg, std::uint64_t seed) : cfg_(cfg)
{
  validate(cfg);
  Rng rng(mix_seed(seed, 0xC0DEULL));

  int c_prev = 1;
  std::array<int, 3> vdims{cfg.volume_input_dims[2], cfg.volume_input_dims[1], cfg.volume_input_dims[0]};
  for (int b = 0; b < cfg.blocks; ++b) {
    const int c = cfg.volume_channels[b];
    auto& conv = volume_branch_.add<nn::Conv3d>(c_prev, c, std::array{3, 3, 3}, std::array{2, 2, 2},
                                                std::array{1, 1, 1}, fmt::format("vol.conv{}", b), rng);
    if (b == 0) {
      conv.set_input_grad(false);
    }
    vdims = conv.output_dims(vdims);
    volume_branch_.add<nn::BatchNorm>(c, fmt::format("vol.bn{}", b));
    volume_branch_.add<nn::Dropout>(cfg.dropout_rate);
    volume_branch_.add<nn::Relu>();
    c_prev = c;
  }
  volume_branch_.add<nn::GlobalAvgPool>();
  volume_features_ = c_prev;

  c_prev = 1;
  int h = cfg.image_input_dims[1];
  int w = cfg.image_input_dims[0];
  for (int b = 0; b < cfg.blocks; ++b) {
    const int c = cfg.image_channels[b];
    auto& conv = image_branch_.add<nn::Conv2d>(c_prev, c, 3, 2, 1, fmt::format("img.conv{}", b), rng);
    if (b == 0) {
      conv.set_input_grad(false);
    }
    h = (h + 2 - 3) / 2 + 1;
    w = (w + 2 - 3) / 2 + 1;
    image_branch_.add<nn::BatchNorm>(c, fmt::format("img.bn{}", b));
    image_branch_.add<nn::Dropout>(cfg.dropout_rate);
    image_branch_.add<nn::Relu>();
    c_prev = c;
  }
  int image_features = c_prev;
  if (cfg.image_pooling == "flatten") {
    image_branch_.add<nn::Flatten>();
    image_features = c_prev * h * w;
  } else {
    image_branch_.add<nn::GlobalAvgPool>();
  }

  fusion_.add<nn::Dense>(volume_features_ + image_features, cfg.fusion_hidden, "fusion.dense0", rng);
  fusion_.add<nn::Relu>();
  fusion_.add<nn::Dense>(cfg.fusion_hidden, cfg.cond_dim, "fusion.dense1", rng);

  head_.add<nn::Dense>(cfg.cond_dim, kPoseDim, "head.dense", rng, nn::Init::zeros);
}

Tensor CondNet::embed(const Tensor& volumes, const Tensor& images, Mode mode)
{
  const auto& vd = cfg_.volume_input_dims;
  const auto& id = cfg_.image_input_dims;
  if (volumes.shape() != std::vector<int>{volumes.rank() ? volumes.dim(0) : 0, 1, vd[2], vd[1], vd[0]}) {
    throw ParameterError(fmt::format("condnet volume input must be (N,1,{},{},{}), got {}", vd[2], vd[1], vd[0],
                                     volumes.shape_string()));
  }
  if (images.shape() != std::vector<int>{volumes.dim(0), 1, id[1], id[0]}) {
    throw ParameterError(
        fmt::format("condnet image input must be (N,1,{},{}), got {}", id[1], id[0], images.shape_string()));
  }
  const Tensor fv = volume_branch_.forward(volumes, mode);
  const Tensor fi = image_branch_.forward(images, mode);
  return fusion_.forward(nn::concat_columns(fv, fi), mode);
}

void CondNet::backward_embed(const Tensor& grad_cond)
{
  const Tensor gh = fusion_.backward(grad_cond);
  Tensor gv;
  Tensor gi;
  nn::split_columns(gh, volume_features_, gv, gi);
  volume_branch_.backward(gv);
  image_branch_.backward(gi);
}

Tensor CondNet::predict_pose(const Tensor& cond) { return head_.forward(cond, Mode::train); }

Tensor CondNet::backward_head(const Tensor& grad_pred) { return head_.backward(grad_pred); }

std::vector<nn::Parameter*> CondNet::trunk_parameters()
{
  std::vector<nn::Parameter*> out;
  volume_branch_.collect_parameters(out);
  image_branch_.collect_parameters(out);
  fusion_.collect_parameters(out);
  return out;
}

std::vector<nn::Parameter*> CondNet::head_parameters() { return nn::parameters_of(head_); }

std::vector<nn::Parameter*> CondNet::all_parameters()
{
  auto out = trunk_parameters();
  head_.collect_parameters(out);
  return out;
}

std::vector<nn::Parameter*> CondNet::trainable(const std::vector<nn::Parameter*>& params)
{
  std::vector<nn::Parameter*> out;
  std::copy_if(params.begin(), params.end(), std::back_inserter(out), [](auto* p) { return p->trainable; });
  return out;
}

void CondNet::reseed(std::uint64_t seed)
{
  volume_branch_.reseed(mix_seed(seed, 1));
  image_branch_.reseed(mix_seed(seed, 2));
  fusion_.reseed(mix_seed(seed, 3));
}

Tensor volume_tensor(const std::vector<const Volume*>& volumes)
{
  if (volumes.empty()) {
    throw ParameterError("empty volume batch");
  }
  const auto dims = volumes.front()->dims;
  Tensor t({static_cast<int>(volumes.size()), 1, dims[2], dims[1], dims[0]});
  const std::size_t n = volumes.front()->size();
  for (std::size_t b = 0; b < volumes.size(); ++b) {
    if (volumes[b]->dims != dims) {
      throw ParameterError("volume batch has mixed dims");
    }
    std::copy(volumes[b]->data.begin(), volumes[b]->data.end(), t.data() + b * n);
  }
  return t;
}

Tensor image_tensor(const std::vector<const Image2D*>& images)
{
  if (images.empty()) {
    throw ParameterError("empty image batch");
  }
  const auto dims = images.front()->dims;
  Tensor t({static_cast<int>(images.size()), 1, dims[1], dims[0]});
  const std::size_t n = images.front()->size();
  for (std::size_t b = 0; b < images.size(); ++b) {
    if (images[b]->dims != dims) {
      throw ParameterError("image batch has mixed dims");
    }
    std::copy(images[b]->data.begin(), images[b]->data.end(), t.data() + b * n);
  }
  return t;
}

Volume prepare_volume(const Volume& v, const CondNetConfig& cfg)
{
  if (v.dims == cfg.volume_input_dims) {
    return v;
  }
  return resample_trilinear(v, cfg.volume_input_dims);
}

std::vector<std::vector<int>> epoch_batches(std::size_t n_samples, int batch_size, std::uint64_t seed, int epoch)
{
  if (batch_size <= 0) {
    throw ParameterError("batch_size must be positive");
  }
  std::vector<int> order(n_samples);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, 0xE0000000ULL + static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> batches;
  for (std::size_t i = 0; i < n_samples; i += batch_size) {
    batches.emplace_back(order.begin() + i, order.begin() + std::min(n_samples, i + batch_size));
  }
  return batches;
}

std::uint64_t step_seed(std::uint64_t seed, int stage, int epoch, int batch)
{
  return mix_seed(mix_seed(mix_seed(seed, stage), epoch), batch);
}

Batch make_batch(const TrainingSet& set, const std::vector<int>& ids, bool augment_inputs, std::uint64_t seed,
                 bool half_turn)
{
  Rng rng(seed);
  std::vector<Volume> vols;
  std::vector<Image2D> imgs;
  vols.reserve(ids.size());
  imgs.reserve(ids.size());
  Batch batch;
  batch.targets = Tensor({static_cast<int>(ids.size()), kPoseDim});
  for (std::size_t b = 0; b < ids.size(); ++b) {
    const TrainingSample& s = set.samples.at(ids[b]);
    PoseVector target = s.target;
    Volume turned;
    const Volume* src = &set.volumes.at(s.volume_index);
    if (half_turn && std::bernoulli_distribution(0.5)(rng)) {
      turned = rot180_volume(*src);
      src = &turned;
      Pose p = vector_pose(target);
      p.lao = canonicalize_lao(p.lao + 180.0);
      target = pose_vector(p);
    }
    const Volume& v = *src;
    if (augment_inputs) {
      vols.push_back(augment(v, rng));
      imgs.push_back(augment(s.image, rng));
    } else {
      vols.push_back(v);
      imgs.push_back(s.image);
    }
    for (int d = 0; d < kPoseDim; ++d) {
      batch.targets[b * kPoseDim + d] = target[d];
    }
  }
  std::vector<const Volume*> vp;
  std::vector<const Image2D*> ip;
  for (std::size_t b = 0; b < ids.size(); ++b) {
    vp.push_back(&vols[b]);
    ip.push_back(&imgs[b]);
  }
  batch.volumes = volume_tensor(vp);
  batch.images = image_tensor(ip);
  batch.sample_ids = ids;
  return batch;
}

double pretrain_epoch(CondNet& net, nn::Adam& adam, const TrainingSet& set, const StageConfig& cfg,
                      std::uint64_t seed, int epoch)
{
  adam.set_lr(nn::lr_schedule(epoch, cfg.lr, cfg.decay_every, cfg.decay_factor));
  const auto batches = epoch_batches(set.samples.size(), cfg.batch_size, seed, epoch);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t bi = 0; bi < batches.size(); ++bi) {
    const std::uint64_t s = step_seed(seed, 1, epoch, static_cast<int>(bi));
    const Batch batch = make_batch(set, batches[bi], cfg.augment, s, cfg.half_turn);
    net.reseed(s);
    nn::zero_grad(adam.parameters());

    const Tensor cond = net.embed(batch.volumes, batch.images, Mode::train);
    const Tensor pred = net.predict_pose(cond);
    const int n = pred.dim(0);
    Tensor grad(pred.shape());
    double loss = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = pred[i] - batch.targets[i];
      loss += d * d;
      grad[i] = 2.0 * d / (n * kPoseDim);
    }
    loss /= n * kPoseDim;
    if (!std::isfinite(loss)) {
      throw NumericError(fmt::format("stage-1 loss is non-finite at epoch {} batch {} (first sample id {})", epoch,
                                     bi, batch.sample_ids.front()));
    }
    net.backward_embed(net.backward_head(grad));
    adam.step();
    total += loss * n;
    count += n;
  }
  return total / count;
}

std::vector<double> pretrain(CondNet& net, const TrainingSet& set, const StageConfig& cfg, std::uint64_t seed)
{
  if (set.samples.empty()) {
    throw ParameterError("pretraining set is empty");
  }
  nn::AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.weight_decay = cfg.weight_decay;
  nn::Adam adam(CondNet::trainable(net.all_parameters()), acfg);
  std::vector<double> history;
  for (int e = 0; e < cfg.epochs; ++e) {
    history.push_back(pretrain_epoch(net, adam, set, cfg, seed, e));
  }
  return history;
}

PoseVector evaluate_mse(CondNet& net, const TrainingSet& set, int batch_size)
{
  PoseVector acc = PoseVector::Zero();
  std::vector<int> ids;
  auto flush = [&]() {
    if (ids.empty()) return;
    const Batch batch = make_batch(set, ids, false, 0);
    const Tensor pred = net.predict_pose(net.embed(batch.volumes, batch.images, Mode::eval));
    for (int i = 0; i < pred.dim(0); ++i) {
      for (int d = 0; d < kPoseDim; ++d) {
        const double e = pred[i * kPoseDim + d] - batch.targets[i * kPoseDim + d];
        acc[d] += e * e;
      }
    }
    ids.clear();
  };
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    ids.push_back(static_cast<int>(i));
    if (static_cast<int>(ids.size()) == batch_size) flush();
  }
  flush();
  return acc / static_cast<double>(set.samples.size());
}

}  // namespace ambireg
