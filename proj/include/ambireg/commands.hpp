#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include <json.hpp>

#include "ambireg/config.hpp"
#include "ambireg/dataset.hpp"
#include "ambireg/eval.hpp"
#include "ambireg/modes.hpp"

namespace ambireg {

/// Writes phantoms, DRRs and train/test manifests under `data_dir`.
GeneratedData cmd_gen_data(const RunConfig& cfg, const std::filesystem::path& data_dir);

struct TrainOptions {
  bool resume = true;             ///< continue from <run_dir>/checkpoints/latest when present
  std::optional<int> stop_after;  ///< stop once this many epochs (stage 1 + stage 2) are done
  std::function<void(const std::string&)> log;  ///< progress lines; may be empty
};

struct TrainResult {
  std::vector<double> stage1_loss;
  std::vector<double> stage2_loss;
  bool finished = false;
  std::filesystem::path model_stem;  ///< <run_dir>/model once finished
};

/// Stage 1 (regression pretraining) then stage 2 (joint likelihood training).
/// After every epoch the full state is checkpointed so an interrupted run
/// resumes with identical results. Loss CSVs: stage1_loss.csv (epoch,lr,train_mse)
/// and stage2_loss.csv (epoch,lr,train_nll).
TrainResult cmd_train(const RunConfig& cfg, const std::filesystem::path& train_manifest,
                      const std::filesystem::path& run_dir, const TrainOptions& opts = {});

/// Per-case JSONL, summary JSON/CSV and lao histograms under out_dir.
EvalSummary cmd_eval(const RunConfig& cfg, const std::filesystem::path& model_stem,
                     const std::filesystem::path& test_manifest, const std::filesystem::path& out_dir);

/// Posterior sampling plus mode detection for one volume/image pair.
ModeReport cmd_infer(const RunConfig& cfg, const std::filesystem::path& model_stem,
                     const std::filesystem::path& volume_path, const std::filesystem::path& image_path,
                     std::uint64_t seed);

/// Seeds of the training and evaluation streams, derived from the run seed.
std::uint64_t model_seed(const RunConfig& cfg);
std::uint64_t train_seed(const RunConfig& cfg);
std::uint64_t eval_seed(const RunConfig& cfg);

}  // namespace ambireg
