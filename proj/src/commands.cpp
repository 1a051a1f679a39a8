#include "ambireg/commands.hpp"

#include <fstream>

#include <fmt/format.h>

#include "ambireg/cinn.hpp"
#include "ambireg/dataset.hpp"
#include "ambireg/error.hpp"
#include "ambireg/eval.hpp"
#include "ambireg/rng.hpp"

namespace ambireg {

using nlohmann::json;
namespace fs = std::filesystem;

std::uint64_t model_seed(const RunConfig& cfg) { return mix_seed(cfg.seed, 10); }
std::uint64_t train_seed(const RunConfig& cfg) { return mix_seed(cfg.seed, 11); }
std::uint64_t eval_seed(const RunConfig& cfg) { return mix_seed(cfg.seed, 12); }

GeneratedData cmd_gen_data(const RunConfig& cfg, const fs::path& data_dir)
{
  return generate_dataset(cfg, data_dir);
}

namespace {

json training_identity(const RunConfig& cfg)
{
  return json{{"seed", cfg.seed},       {"condnet", cfg.condnet}, {"flow", cfg.flow},
              {"stage1", cfg.stage1},   {"stage2", cfg.stage2}};
}

void write_loss_csv(const fs::path& path, const char* column, const std::vector<double>& history,
                    const StageConfig& stage)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  out << "epoch,lr," << column << '\n';
  for (std::size_t e = 0; e < history.size(); ++e) {
    const double lr = nn::lr_schedule(static_cast<int>(e), stage.lr, stage.decay_every, stage.decay_factor);
    out << fmt::format("{},{:.17g},{:.17g}\n", e, lr, history[e]);
  }
}

void store_adam(nn::Checkpoint& ckpt, nn::Adam& adam)
{
  ckpt.meta["adam_steps"] = adam.step_count();
  for (std::size_t i = 0; i < adam.first_moments().size(); ++i) {
    ckpt.tensors[fmt::format("adam.m.{}", i)] = adam.first_moments()[i];
    ckpt.tensors[fmt::format("adam.v.{}", i)] = adam.second_moments()[i];
  }
}

void load_adam(const nn::Checkpoint& ckpt, nn::Adam& adam)
{
  adam.set_step_count(ckpt.meta.at("adam_steps").get<std::int64_t>());
  for (std::size_t i = 0; i < adam.first_moments().size(); ++i) {
    const auto m = ckpt.tensors.find(fmt::format("adam.m.{}", i));
    const auto v = ckpt.tensors.find(fmt::format("adam.v.{}", i));
    if (m == ckpt.tensors.end() || v == ckpt.tensors.end() ||
        m->second.shape() != adam.first_moments()[i].shape() ||
        v->second.shape() != adam.second_moments()[i].shape()) {
      throw FormatError(fmt::format("training checkpoint has no matching optimizer state for parameter {}", i));
    }
    adam.first_moments()[i] = m->second;
    adam.second_moments()[i] = v->second;
  }
}

nn::AdamConfig adam_config(const StageConfig& s)
{
  nn::AdamConfig a;
  a.lr = s.lr;
  a.weight_decay = s.weight_decay;
  return a;
}

}  // namespace

TrainResult cmd_train(const RunConfig& cfg, const fs::path& train_manifest, const fs::path& run_dir,
                      const TrainOptions& opts)
{
  validate(cfg);
  auto log = [&](const std::string& line) {
    if (opts.log) {
      opts.log(line);
    }
  };
  const DatasetManifest manifest = load_manifest(train_manifest);
  check_manifest_integrity(manifest);
  if (manifest.records.empty()) {
    throw ParameterError("training manifest has no records");
  }
  const TrainingSet set = load_training_set(manifest, cfg.condnet);

  const fs::path ckpt_dir = run_dir / "checkpoints";
  const fs::path latest = ckpt_dir / "latest";
  fs::create_directories(ckpt_dir);

  RegistrationModel model(cfg.condnet, cfg.flow, model_seed(cfg));
  TrainResult result;
  std::optional<nn::Checkpoint> resume_state;
  if (opts.resume && nn::checkpoint_exists(latest)) {
    resume_state = nn::load_checkpoint(latest);
    const auto& meta = resume_state->meta;
    if (meta.value("kind", "") != "ambireg-train-state") {
      throw FormatError(latest.string() + " is not a training checkpoint");
    }
    if (meta.at("identity") != training_identity(cfg)) {
      throw ConfigError("checkpoint " + latest.string() + " was written with a different training config");
    }
    load_parameters(*resume_state, "condnet.", model.condnet.all_parameters());
    load_parameters(*resume_state, "flow.", model.flow.parameters());
    result.stage1_loss = meta.at("stage1_loss").get<std::vector<double>>();
    result.stage2_loss = meta.at("stage2_loss").get<std::vector<double>>();
    log(fmt::format("resuming after {} stage-1 and {} stage-2 epochs", result.stage1_loss.size(),
                    result.stage2_loss.size()));
  }

  const std::uint64_t seed = train_seed(cfg);
  int epochs_done = static_cast<int>(result.stage1_loss.size() + result.stage2_loss.size());
  auto should_stop = [&]() { return opts.stop_after && epochs_done >= *opts.stop_after; };

  auto save_state = [&](nn::Adam& adam) {
    nn::Checkpoint ckpt = model_checkpoint(model);
    ckpt.meta["kind"] = "ambireg-train-state";
    ckpt.meta["identity"] = training_identity(cfg);
    ckpt.meta["stage1_loss"] = result.stage1_loss;
    ckpt.meta["stage2_loss"] = result.stage2_loss;
    store_adam(ckpt, adam);
    nn::save_checkpoint(ckpt, latest);
    write_loss_csv(run_dir / "stage1_loss.csv", "train_mse", result.stage1_loss, cfg.stage1);
    write_loss_csv(run_dir / "stage2_loss.csv", "train_nll", result.stage2_loss, cfg.stage2);
  };

  // Stage 1: regression pretraining of the conditioning network.
  if (static_cast<int>(result.stage1_loss.size()) < cfg.stage1.epochs) {
    nn::Adam adam(CondNet::trainable(model.condnet.all_parameters()), adam_config(cfg.stage1));
    if (resume_state) {
      load_adam(*resume_state, adam);
    }
    while (static_cast<int>(result.stage1_loss.size()) < cfg.stage1.epochs) {
      if (should_stop()) {
        return result;
      }
      const int e = static_cast<int>(result.stage1_loss.size());
      result.stage1_loss.push_back(pretrain_epoch(model.condnet, adam, set, cfg.stage1, seed, e));
      ++epochs_done;
      save_state(adam);
      log(fmt::format("stage1 epoch {}/{} lr {:g} mse {:.6f}", e + 1, cfg.stage1.epochs,
                      nn::lr_schedule(e, cfg.stage1.lr, cfg.stage1.decay_every, cfg.stage1.decay_factor),
                      result.stage1_loss.back()));
    }
    save_model(model, ckpt_dir / "stage1");
    resume_state.reset();
  }

  // Stage 2: joint likelihood training of trunk and flow with a fresh optimizer.
  {
    nn::Adam adam(model.stage2_parameters(), adam_config(cfg.stage2));
    if (resume_state && !result.stage2_loss.empty()) {
      load_adam(*resume_state, adam);
    }
    DivergenceMonitor monitor;
    for (double l : result.stage2_loss) {
      monitor.update(l);
    }
    while (static_cast<int>(result.stage2_loss.size()) < cfg.stage2.epochs) {
      if (should_stop()) {
        return result;
      }
      const int e = static_cast<int>(result.stage2_loss.size());
      double loss = 0.0;
      try {
        loss = stage2_epoch(model, adam, set, cfg.stage2, seed, e);
      } catch (const NumericError& err) {
        const fs::path dump = ckpt_dir / "diverged";
        save_model(model, dump);
        throw TrainingError(fmt::format("stage-2 training failed at epoch {}: {}", e, err.what()), dump.string());
      }
      result.stage2_loss.push_back(loss);
      ++epochs_done;
      if (monitor.update(loss)) {
        const fs::path dump = ckpt_dir / "diverged";
        save_model(model, dump);
        throw TrainingError(fmt::format("stage-2 training diverged at epoch {} (loss {})", e, loss), dump.string());
      }
      save_state(adam);
      log(fmt::format("stage2 epoch {}/{} lr {:g} nll {:.6f}", e + 1, cfg.stage2.epochs,
                      nn::lr_schedule(e, cfg.stage2.lr, cfg.stage2.decay_every, cfg.stage2.decay_factor), loss));
    }
  }

  result.model_stem = run_dir / "model";
  save_model(model, result.model_stem);
  write_loss_csv(run_dir / "stage1_loss.csv", "train_mse", result.stage1_loss, cfg.stage1);
  write_loss_csv(run_dir / "stage2_loss.csv", "train_nll", result.stage2_loss, cfg.stage2);
  result.finished = true;
  return result;
}

EvalSummary cmd_eval(const RunConfig& cfg, const fs::path& model_stem, const fs::path& test_manifest,
                     const fs::path& out_dir)
{
  validate(cfg);
  const DatasetManifest manifest = load_manifest(test_manifest);
  check_manifest_integrity(manifest);
  RegistrationModel model = load_model(model_stem);

  EvalOptions opts;
  opts.threshold = cfg.modes.threshold;
  opts.n_samples = cfg.modes.n_samples;
  opts.gmm = cfg.modes.gmm;
  opts.seed = eval_seed(cfg);
  std::vector<Eigen::MatrixXd> samples;
  const auto cases =
      evaluate_testset(model, manifest, opts, cfg.eval.max_cases, &samples, cfg.eval.histogram_cases);
  const EvalSummary summary = summarize(cases);

  write_cases_jsonl(cases, out_dir / "cases.jsonl");
  write_summary_json(summary, out_dir / "summary.json");
  write_summary_csv(summary, out_dir / "summary.csv");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto counts = lao_histogram(samples[i]);
    const std::string stem = fmt::format("case_{:04d}_lao", cases[i].case_id);
    write_histogram_csv(counts, out_dir / "histograms" / (stem + ".csv"));
    if (cfg.eval.svg) {
      write_histogram_svg(counts, cases[i].true_pose, out_dir / "histograms" / (stem + ".svg"));
    }
  }
  return summary;
}

ModeReport cmd_infer(const RunConfig& cfg, const fs::path& model_stem, const fs::path& volume_path,
                     const fs::path& image_path, std::uint64_t seed)
{
  validate(cfg);
  RegistrationModel model = load_model(model_stem);
  const Volume volume = load_volume(volume_path);
  const Image2D image = load_image(image_path);
  if (image.dims != model.condnet.config().image_input_dims) {
    throw ParameterError(fmt::format("image is {}x{}, model expects {}x{}", image.dims[0], image.dims[1],
                                     model.condnet.config().image_input_dims[0],
                                     model.condnet.config().image_input_dims[1]));
  }
  const Eigen::MatrixXd samples = sample_posterior(model, volume, image, cfg.modes.n_samples, seed);
  return detect_modes(samples, cfg.modes.threshold, seed, cfg.modes.gmm);
}

}  // namespace ambireg
