#include "ambireg/cinn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <fmt/format.h>

#include "ambireg/config.hpp"
#include "ambireg/error.hpp"
#include "ambireg/rng.hpp"

namespace ambireg {

using nn::Mode;
using nn::Tensor;

double soft_clamp(double s, double alpha) { return (2.0 * alpha / std::numbers::pi) * std::atan(s / alpha); }

double soft_clamp_derivative(double s, double alpha)
{
  const double r = s / alpha;
  return (2.0 / std::numbers::pi) / (1.0 + r * r);
}

void validate(const FlowConfig& cfg)
{
  if (cfg.depth < 1 || cfg.hidden < 1 || cfg.hidden_layers < 1) {
    throw ConfigError("flow depth, hidden and hidden_layers must be positive");
  }
  if (cfg.passive_dims < 1 || cfg.passive_dims >= kPoseDim) {
    throw ConfigError(fmt::format("flow passive_dims must be in [1, {}]", kPoseDim - 1));
  }
  if (!(cfg.clamp_alpha > 0.0) || cfg.cond_dim < 0) {
    throw ConfigError("flow clamp_alpha must be positive and cond_dim non-negative");
  }
}

// ---------------------------------------------------------------------------- CouplingBlock

namespace {

void build_subnet(nn::Sequential& net, const FlowConfig& cfg, int out, const std::string& name, Rng& rng)
{
  int in = cfg.passive_dims + cfg.cond_dim;
  for (int l = 0; l < cfg.hidden_layers; ++l) {
    net.add<nn::Dense>(in, cfg.hidden, fmt::format("{}.dense{}", name, l), rng);
    net.add<nn::Relu>();
    in = cfg.hidden;
  }
  net.add<nn::Dense>(in, out, fmt::format("{}.dense{}", name, cfg.hidden_layers), rng, nn::Init::zeros);
}

Tensor permute_columns(const Tensor& x, const Permutation& perm)
{
  const int n = x.dim(0);
  Tensor out({n, kPoseDim});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < kPoseDim; ++j) {
      out[i * kPoseDim + j] = x[i * kPoseDim + perm[j]];
    }
  }
  return out;
}

Tensor unpermute_columns(const Tensor& xp, const Permutation& perm)
{
  const int n = xp.dim(0);
  Tensor out({n, kPoseDim});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < kPoseDim; ++j) {
      out[i * kPoseDim + perm[j]] = xp[i * kPoseDim + j];
    }
  }
  return out;
}

void check_flow_inputs(const Tensor& x, const Tensor& cond, int cond_dim)
{
  if (x.rank() != 2 || x.dim(1) != kPoseDim) {
    throw ParameterError("flow input must be (N, 5), got " + x.shape_string());
  }
  if (cond.rank() != 2 || cond.dim(0) != x.dim(0) || cond.dim(1) != cond_dim) {
    throw ParameterError(fmt::format("flow condition must be ({}, {}), got {}", x.dim(0), cond_dim,
                                     cond.shape_string()));
  }
  if (!x.all_finite() || !cond.all_finite()) {
    throw NumericError("non-finite flow input or condition");
  }
}

}  // namespace

CouplingBlock::CouplingBlock(const FlowConfig& cfg, const Permutation& perm, const std::string& name, Rng& rng)
    : passive_(cfg.passive_dims), active_(kPoseDim - cfg.passive_dims), alpha_(cfg.clamp_alpha), perm_(perm)
{
  build_subnet(s_net_, cfg, active_, name + ".s", rng);
  build_subnet(t_net_, cfg, active_, name + ".t", rng);
}

void CouplingBlock::subnets(const Tensor& passive, const Tensor& cond, Tensor& s_raw, Tensor& t, Mode mode)
{
  const Tensor h = nn::concat_columns(passive, cond);
  s_raw = s_net_.forward(h, mode);
  t = t_net_.forward(h, mode);
}

Tensor CouplingBlock::forward(const Tensor& x, const Tensor& cond, std::vector<double>& logdet)
{
  const int n = x.dim(0);
  Tensor passive;
  split_columns(permute_columns(x, perm_), passive_, passive, active_in_);
  Tensor t;
  subnets(passive, cond, s_raw_, t, Mode::train);
  s_ = Tensor(s_raw_.shape());
  Tensor active_out({n, active_});
  for (int i = 0; i < n; ++i) {
    double ld = 0.0;
    for (int j = 0; j < active_; ++j) {
      const std::size_t k = std::size_t(i) * active_ + j;
      s_[k] = soft_clamp(s_raw_[k], alpha_);
      active_out[k] = active_in_[k] * std::exp(s_[k]) + t[k];
      ld += s_[k];
    }
    logdet[i] += ld;
  }
  return nn::concat_columns(passive, active_out);
}

Tensor CouplingBlock::backward(const Tensor& grad_y, const std::vector<double>& grad_logdet, Tensor& grad_cond)
{
  const int n = grad_y.dim(0);
  Tensor g_passive_out;
  Tensor g_active_out;
  split_columns(grad_y, passive_, g_passive_out, g_active_out);

  Tensor g_active_in({n, active_});
  Tensor g_s_raw({n, active_});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < active_; ++j) {
      const std::size_t k = std::size_t(i) * active_ + j;
      const double e = std::exp(s_[k]);
      g_active_in[k] = g_active_out[k] * e;
      const double g_s = g_active_out[k] * active_in_[k] * e + grad_logdet[i];
      g_s_raw[k] = g_s * soft_clamp_derivative(s_raw_[k], alpha_);
    }
  }
  const Tensor gh_s = s_net_.backward(g_s_raw);
  const Tensor gh_t = t_net_.backward(g_active_out);
  const int width = gh_s.dim(1);
  const int cdim = width - passive_;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < passive_; ++j) {
      const std::size_t k = std::size_t(i) * width + j;
      g_passive_out[i * passive_ + j] += gh_s[k] + gh_t[k];
    }
    for (int j = 0; j < cdim; ++j) {
      const std::size_t k = std::size_t(i) * width + passive_ + j;
      grad_cond[std::size_t(i) * cdim + j] += gh_s[k] + gh_t[k];
    }
  }
  return unpermute_columns(nn::concat_columns(g_passive_out, g_active_in), perm_);
}

Tensor CouplingBlock::inverse(const Tensor& y, const Tensor& cond)
{
  const int n = y.dim(0);
  Tensor passive;
  Tensor active_out;
  split_columns(y, passive_, passive, active_out);
  Tensor s_raw;
  Tensor t;
  subnets(passive, cond, s_raw, t, Mode::eval);
  Tensor active_in({n, active_});
  for (std::size_t k = 0; k < active_in.size(); ++k) {
    active_in[k] = (active_out[k] - t[k]) * std::exp(-soft_clamp(s_raw[k], alpha_));
  }
  return unpermute_columns(nn::concat_columns(passive, active_in), perm_);
}

// ---------------------------------------------------------------------------- FlowModel

namespace {

std::vector<Permutation> random_permutations(int depth, std::uint64_t seed)
{
  Rng rng = make_rng(seed, 0xF10CULL);
  std::vector<Permutation> perms(depth);
  for (auto& p : perms) {
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
  }
  return perms;
}

}  // namespace

FlowModel::FlowModel(const FlowConfig& cfg, std::uint64_t seed)
    : FlowModel(cfg, random_permutations(cfg.depth, seed), seed)
{
}

FlowModel::FlowModel(const FlowConfig& cfg, const std::vector<Permutation>& perms, std::uint64_t seed) : cfg_(cfg)
{
  validate(cfg);
  if (static_cast<int>(perms.size()) != cfg.depth) {
    throw ParameterError("flow needs one permutation per block");
  }
  Rng rng = make_rng(seed, 0xB10CULL);
  blocks_.reserve(perms.size());
  for (std::size_t b = 0; b < perms.size(); ++b) {
    Permutation sorted = perms[b];
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < kPoseDim; ++i) {
      if (sorted[i] != i) {
        throw ParameterError("flow permutation is not a bijection of 0..4");
      }
    }
    blocks_.emplace_back(cfg, perms[b], fmt::format("block{}", b), rng);
  }
}

FlowModel::Output FlowModel::forward(const Tensor& x, const Tensor& cond)
{
  check_flow_inputs(x, cond, cfg_.cond_dim);
  batch_ = x.dim(0);
  Output out;
  out.logdet.assign(batch_, 0.0);
  Tensor h = x;
  for (auto& b : blocks_) {
    h = b.forward(h, cond, out.logdet);
  }
  if (!h.all_finite()) {
    throw NumericError("non-finite latent in flow forward");
  }
  out.z = std::move(h);
  return out;
}

std::pair<Tensor, Tensor> FlowModel::backward(const Tensor& grad_z, const std::vector<double>& grad_logdet)
{
  if (grad_z.rank() != 2 || grad_z.dim(0) != batch_ || static_cast<int>(grad_logdet.size()) != batch_) {
    throw ParameterError("flow backward does not match the last forward batch");
  }
  Tensor grad_cond({batch_, cfg_.cond_dim});
  Tensor g = grad_z;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    g = it->backward(g, grad_logdet, grad_cond);
  }
  return {std::move(g), std::move(grad_cond)};
}

Tensor FlowModel::inverse(const Tensor& z, const Tensor& cond)
{
  check_flow_inputs(z, cond, cfg_.cond_dim);
  Tensor h = z;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    h = it->inverse(h, cond);
  }
  return h;
}

std::vector<nn::Parameter*> FlowModel::parameters()
{
  std::vector<nn::Parameter*> out;
  for (auto& b : blocks_) {
    b.scale_net().collect_parameters(out);
    b.shift_net().collect_parameters(out);
  }
  return out;
}

std::vector<Permutation> FlowModel::permutations() const
{
  std::vector<Permutation> out;
  for (const auto& b : blocks_) {
    out.push_back(b.permutation());
  }
  return out;
}

// ---------------------------------------------------------------------------- losses

namespace {

Tensor single_row(const Eigen::VectorXd& v)
{
  Tensor t({1, static_cast<int>(v.size())});
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    t[i] = v[i];
  }
  return t;
}

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

}  // namespace

std::pair<PoseVector, double> flow_forward(FlowModel& flow, const PoseVector& x, const Eigen::VectorXd& cond)
{
  const auto out = flow.forward(single_row(x), single_row(cond));
  PoseVector z;
  for (int d = 0; d < kPoseDim; ++d) {
    z[d] = out.z[d];
  }
  return {z, out.logdet[0]};
}

PoseVector flow_inverse(FlowModel& flow, const PoseVector& z, const Eigen::VectorXd& cond)
{
  const Tensor x = flow.inverse(single_row(z), single_row(cond));
  PoseVector out;
  for (int d = 0; d < kPoseDim; ++d) {
    out[d] = x[d];
  }
  return out;
}

double nll_loss(FlowModel& flow, const Tensor& x, const Tensor& cond)
{
  if (x.rank() != 2 || x.dim(0) == 0) {
    throw ParameterError("nll_loss needs a non-empty batch");
  }
  const auto out = flow.forward(x, cond);
  const int n = x.dim(0);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    double sq = 0.0;
    for (int d = 0; d < kPoseDim; ++d) {
      sq += out.z[i * kPoseDim + d] * out.z[i * kPoseDim + d];
    }
    acc += 0.5 * sq - out.logdet[i];
  }
  const double loss = acc / n + kPoseDim * kHalfLog2Pi;
  if (!std::isfinite(loss)) {
    throw NumericError("non-finite NLL");
  }
  return loss;
}

double nll_loss_backward(FlowModel& flow, const Tensor& x, const Tensor& cond, Tensor* grad_cond)
{
  if (x.rank() != 2 || x.dim(0) == 0) {
    throw ParameterError("nll_loss needs a non-empty batch");
  }
  const auto out = flow.forward(x, cond);
  const int n = x.dim(0);
  double acc = 0.0;
  Tensor grad_z(out.z.shape());
  for (int i = 0; i < n; ++i) {
    double sq = 0.0;
    for (int d = 0; d < kPoseDim; ++d) {
      const double z = out.z[i * kPoseDim + d];
      sq += z * z;
      grad_z[i * kPoseDim + d] = z / n;
    }
    acc += 0.5 * sq - out.logdet[i];
  }
  const double loss = acc / n + kPoseDim * kHalfLog2Pi;
  if (!std::isfinite(loss)) {
    throw NumericError("non-finite NLL");
  }
  const std::vector<double> grad_logdet(n, -1.0 / n);
  auto [gx, gc] = flow.backward(grad_z, grad_logdet);
  if (grad_cond) {
    *grad_cond = std::move(gc);
  }
  return loss;
}

Tensor rows_to_tensor(const std::vector<PoseVector>& rows)
{
  Tensor t({static_cast<int>(rows.size()), kPoseDim});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int d = 0; d < kPoseDim; ++d) {
      t[i * kPoseDim + d] = rows[i][d];
    }
  }
  return t;
}

// ---------------------------------------------------------------------------- training

namespace {

FlowConfig matched(FlowConfig fcfg, const CondNetConfig& ccfg)
{
  if (fcfg.cond_dim != ccfg.cond_dim) {
    throw ConfigError(fmt::format("flow cond_dim {} != condnet cond_dim {}", fcfg.cond_dim, ccfg.cond_dim));
  }
  return fcfg;
}

}  // namespace

RegistrationModel::RegistrationModel(const CondNetConfig& ccfg, const FlowConfig& fcfg, std::uint64_t seed)
    : condnet(ccfg, mix_seed(seed, 1)), flow(matched(fcfg, ccfg), mix_seed(seed, 2))
{
}

std::vector<nn::Parameter*> RegistrationModel::stage2_parameters()
{
  auto out = CondNet::trainable(condnet.trunk_parameters());
  const auto fp = flow.parameters();
  out.insert(out.end(), fp.begin(), fp.end());
  return out;
}

double stage2_epoch(RegistrationModel& model, nn::Adam& adam, const TrainingSet& set, const StageConfig& cfg,
                    std::uint64_t seed, int epoch)
{
  adam.set_lr(nn::lr_schedule(epoch, cfg.lr, cfg.decay_every, cfg.decay_factor));
  const auto batches = epoch_batches(set.samples.size(), cfg.batch_size, seed, epoch);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t bi = 0; bi < batches.size(); ++bi) {
    const std::uint64_t s = step_seed(seed, 2, epoch, static_cast<int>(bi));
    const Batch batch = make_batch(set, batches[bi], cfg.augment, s, cfg.half_turn);
    model.condnet.reseed(s);
    nn::zero_grad(adam.parameters());
    const Tensor cond = model.condnet.embed(batch.volumes, batch.images, Mode::train);
    Tensor grad_cond;
    double loss = 0.0;
    try {
      loss = nll_loss_backward(model.flow, batch.targets, cond, &grad_cond);
    } catch (const NumericError& e) {
      throw NumericError(fmt::format("stage-2 epoch {} batch {} (first sample id {}): {}", epoch, bi,
                                     batch.sample_ids.front(), e.what()));
    }
    model.condnet.backward_embed(grad_cond);
    adam.step();
    total += loss * batch.targets.dim(0);
    count += batch.targets.dim(0);
  }
  return total / count;
}

bool DivergenceMonitor::update(double epoch_loss)
{
  if (!have_initial_) {
    have_initial_ = true;
    initial_ = epoch_loss;
    return !std::isfinite(epoch_loss);
  }
  if (!std::isfinite(epoch_loss) || epoch_loss > 10.0 * std::abs(initial_)) {
    ++strikes_;
  } else {
    strikes_ = 0;
  }
  return strikes_ >= 3;
}

std::vector<double> train_stage2(RegistrationModel& model, const TrainingSet& set, const StageConfig& cfg,
                                 std::uint64_t seed, const std::function<std::string(int)>& on_diverge)
{
  if (set.samples.empty()) {
    throw ParameterError("stage-2 training set is empty");
  }
  nn::AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.weight_decay = cfg.weight_decay;
  nn::Adam adam(model.stage2_parameters(), acfg);
  DivergenceMonitor monitor;
  std::vector<double> history;
  for (int e = 0; e < cfg.epochs; ++e) {
    history.push_back(stage2_epoch(model, adam, set, cfg, seed, e));
    if (monitor.update(history.back())) {
      const std::string dump = on_diverge ? on_diverge(e) : std::string();
      throw TrainingError(fmt::format("stage-2 training diverged at epoch {} (loss {})", e, history.back()), dump);
    }
  }
  return history;
}

// ---------------------------------------------------------------------------- sampling

double canonical_lao_component(double v)
{
  const double lao = v * kLaoScale + kLaoOffset;
  const double canon = canonicalize_lao(lao);
  return canon == lao ? v : (canon - kLaoOffset) / kLaoScale;
}

Eigen::VectorXd condition_vector(RegistrationModel& model, const Volume& volume, const Image2D& image)
{
  const Volume v = prepare_volume(volume, model.condnet.config());
  const Tensor cond = model.condnet.embed(volume_tensor({&v}), image_tensor({&image}), Mode::eval);
  Eigen::VectorXd c(cond.size());
  for (std::size_t i = 0; i < cond.size(); ++i) {
    c[static_cast<Eigen::Index>(i)] = cond[i];
  }
  return c;
}

Eigen::MatrixXd sample_flow(FlowModel& flow, const Eigen::VectorXd& cond, int n_samples, std::uint64_t seed)
{
  if (n_samples <= 0) {
    throw ParameterError("n_samples must be positive");
  }
  Rng rng = make_rng(seed, 0x5A3DULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd out(n_samples, kPoseDim);
  constexpr int kChunk = 1024;
  const int cdim = static_cast<int>(cond.size());
  for (int start = 0; start < n_samples; start += kChunk) {
    const int m = std::min(kChunk, n_samples - start);
    Tensor z({m, kPoseDim});
    for (double& v : z.values()) {
      v = normal(rng);
    }
    Tensor c({m, cdim});
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < cdim; ++j) {
        c[std::size_t(i) * cdim + j] = cond[j];
      }
    }
    const Tensor x = flow.inverse(z, c);
    for (int i = 0; i < m; ++i) {
      for (int d = 0; d < kPoseDim; ++d) {
        out(start + i, d) = x[std::size_t(i) * kPoseDim + d];
      }
      out(start + i, 3) = canonical_lao_component(out(start + i, 3));
    }
  }
  return out;
}

Eigen::MatrixXd sample_posterior(RegistrationModel& model, const Volume& volume, const Image2D& image,
                                 int n_samples, std::uint64_t seed)
{
  return sample_flow(model.flow, condition_vector(model, volume, image), n_samples, seed);
}

// ---------------------------------------------------------------------------- checkpoints

void store_parameters(nn::Checkpoint& ckpt, const std::string& prefix, const std::vector<nn::Parameter*>& params)
{
  for (const auto* p : params) {
    ckpt.tensors[prefix + p->name] = p->value;
  }
}

void load_parameters(const nn::Checkpoint& ckpt, const std::string& prefix, const std::vector<nn::Parameter*>& params)
{
  for (auto* p : params) {
    const auto it = ckpt.tensors.find(prefix + p->name);
    if (it == ckpt.tensors.end()) {
      throw FormatError("checkpoint is missing tensor " + prefix + p->name);
    }
    if (it->second.shape() != p->value.shape()) {
      throw FormatError(fmt::format("checkpoint tensor {} has shape {}, model expects {}", it->first,
                                    it->second.shape_string(), p->value.shape_string()));
    }
    p->value = it->second;
  }
}

nn::Checkpoint model_checkpoint(RegistrationModel& model)
{
  nn::Checkpoint ckpt;
  ckpt.meta["kind"] = "ambireg-model";
  ckpt.meta["condnet"] = model.condnet.config();
  ckpt.meta["flow"] = model.flow.config();
  ckpt.meta["permutations"] = model.flow.permutations();
  store_parameters(ckpt, "condnet.", model.condnet.all_parameters());
  store_parameters(ckpt, "flow.", model.flow.parameters());
  return ckpt;
}

RegistrationModel model_from_checkpoint(const nn::Checkpoint& ckpt)
{
  CondNetConfig ccfg;
  FlowConfig fcfg;
  std::vector<Permutation> perms;
  try {
    ccfg = ckpt.meta.at("condnet").get<CondNetConfig>();
    fcfg = ckpt.meta.at("flow").get<FlowConfig>();
    perms = ckpt.meta.at("permutations").get<std::vector<Permutation>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("checkpoint metadata does not describe a model: {}", e.what()));
  } catch (const ConfigError& e) {
    throw FormatError(fmt::format("checkpoint metadata is invalid: {}", e.what()));
  }
  RegistrationModel model(CondNet(ccfg, 0), FlowModel(matched(fcfg, ccfg), perms, 0));
  load_parameters(ckpt, "condnet.", model.condnet.all_parameters());
  load_parameters(ckpt, "flow.", model.flow.parameters());
  return model;
}

void save_model(RegistrationModel& model, const std::filesystem::path& stem)
{
  nn::save_checkpoint(model_checkpoint(model), stem);
}

RegistrationModel load_model(const std::filesystem::path& stem) { return model_from_checkpoint(nn::load_checkpoint(stem)); }

}  // namespace ambireg
