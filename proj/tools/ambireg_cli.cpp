// Command-line front end: gen-data, train, eval, infer, print-config.

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "ambireg/commands.hpp"
#include "ambireg/config.hpp"
#include "ambireg/error.hpp"

namespace fs = std::filesystem;
using namespace ambireg;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* app, Common& c)
{
  app->add_option("-c,--config", c.config_path, "JSON run config (defaults when omitted)");
  app->add_option("-s,--set", c.overrides, "Override a config key, e.g. --set stage2.epochs=10")->take_all();
}

RunConfig resolve_config(const Common& c)
{
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path);
  return apply_overrides(cfg, c.overrides);
}

/// Progress to stderr plus a timestamped sidecar log; nothing timestamped goes
/// into the deterministic artifacts.
class SidecarLog {
 public:
  explicit SidecarLog(const fs::path& path)
  {
    fs::create_directories(path.parent_path());
    out_.open(path, std::ios::app);
  }

  void operator()(const std::string& line)
  {
    std::cerr << line << '\n';
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%S", std::localtime(&now));
    out_ << stamp << ' ' << line << '\n' << std::flush;
  }

 private:
  std::ofstream out_;
};

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Ambiguity-aware 2D/3D registration with a conditional invertible network"};
  app.require_subcommand(1);

  Common gen_common;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Generate phantoms, DRRs and train/test manifests");
  add_common(gen, gen_common);
  gen->add_option("-o,--out", gen_out, "Output directory (default: paths.data_dir)");

  Common train_common;
  std::string train_data;
  std::string train_run;
  bool no_resume = false;
  int stop_after = -1;
  auto* train = app.add_subcommand("train", "Two-stage training");
  add_common(train, train_common);
  train->add_option("-d,--data", train_data, "Data directory holding train.jsonl (default: paths.data_dir)");
  train->add_option("-r,--run", train_run, "Run directory (default: paths.run_dir)");
  train->add_flag("--no-resume", no_resume, "Ignore an existing checkpoint and start over");
  train->add_option("--stop-after", stop_after, "Stop once this many epochs (both stages) are done")
      ->check(CLI::NonNegativeNumber);

  Common eval_common;
  std::string eval_data;
  std::string eval_model;
  std::string eval_out;
  auto* eval = app.add_subcommand("eval", "Evaluate a trained model on the test manifest");
  add_common(eval, eval_common);
  eval->add_option("-d,--data", eval_data, "Data directory holding test.jsonl (default: paths.data_dir)");
  eval->add_option("-m,--model", eval_model, "Model checkpoint stem (default: <run_dir>/model)");
  eval->add_option("-o,--out", eval_out, "Output directory (default: <run_dir>/eval)");

  Common infer_common;
  std::string infer_model;
  std::string infer_volume;
  std::string infer_image;
  std::uint64_t infer_seed = 0;
  std::string infer_out;
  auto* infer = app.add_subcommand("infer", "Posterior modes for one volume/image pair");
  add_common(infer, infer_common);
  infer->add_option("-m,--model", infer_model, "Model checkpoint stem (default: <run_dir>/model)");
  infer->add_option("--volume", infer_volume, "Volume file")->required();
  infer->add_option("--image", infer_image, "Projection image file")->required();
  infer->add_option("--seed", infer_seed, "Sampling seed");
  infer->add_option("-o,--out", infer_out, "Write the report JSON here instead of stdout");

  Common print_common;
  auto* print = app.add_subcommand("print-config", "Print the effective config with all defaults");
  add_common(print, print_common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      const RunConfig cfg = resolve_config(gen_common);
      const fs::path out = gen_out.empty() ? resolve_output_path(cfg.paths.data_dir) : fs::path(gen_out);
      SidecarLog log(out / "logs" / "gen-data.log");
      log(fmt::format("generating data in {}", out.string()));
      const auto g = cmd_gen_data(cfg, out);
      log(fmt::format("wrote {} and {} (norm_constant {:.6g})", g.train_manifest.string(), g.test_manifest.string(),
                      g.norm_constant));
    } else if (*train) {
      const RunConfig cfg = resolve_config(train_common);
      const fs::path data = train_data.empty() ? resolve_output_path(cfg.paths.data_dir) : fs::path(train_data);
      const fs::path run = train_run.empty() ? resolve_output_path(cfg.paths.run_dir) : fs::path(train_run);
      fs::create_directories(run);
      {
        std::ofstream(run / "config.json") << nlohmann::json(cfg).dump(2) << '\n';
      }
      SidecarLog log(run / "logs" / "train.log");
      TrainOptions opts;
      opts.resume = !no_resume;
      if (stop_after >= 0) {
        opts.stop_after = stop_after;
      }
      opts.log = [&](const std::string& s) { log(s); };
      const auto r = cmd_train(cfg, data / "train.jsonl", run, opts);
      log(r.finished ? fmt::format("training finished: {}", r.model_stem.string())
                     : fmt::format("stopped after {} epochs", r.stage1_loss.size() + r.stage2_loss.size()));
    } else if (*eval) {
      const RunConfig cfg = resolve_config(eval_common);
      const fs::path data = eval_data.empty() ? resolve_output_path(cfg.paths.data_dir) : fs::path(eval_data);
      const fs::path run = resolve_output_path(cfg.paths.run_dir);
      const fs::path model = eval_model.empty() ? run / "model" : fs::path(eval_model);
      const fs::path out = eval_out.empty() ? run / "eval" : fs::path(eval_out);
      SidecarLog log(out / "logs" / "eval.log");
      const EvalSummary s = cmd_eval(cfg, model, data / "test.jsonl", out);
      for (const auto& sub : s.subsets) {
        log(fmt::format("{:<9} n={:<4} multimodal={:<4} L1 modes={:.4f} closer={:.4f} second={:.4f} single={:.4f}",
                        sub.subset, sub.n_total, sub.n_multimodal, sub.mean_l1_modes, sub.mean_l1_closer,
                        sub.mean_l1_second, sub.mean_l1_single));
      }
    } else if (*infer) {
      const RunConfig cfg = resolve_config(infer_common);
      const fs::path model =
          infer_model.empty() ? resolve_output_path(cfg.paths.run_dir) / "model" : fs::path(infer_model);
      const ModeReport r = cmd_infer(cfg, model, infer_volume, infer_image, infer_seed);
      const std::string text = nlohmann::json(r).dump(2);
      if (infer_out.empty()) {
        std::cout << text << '\n';
      } else {
        std::ofstream out(infer_out);
        if (!out) {
          throw IoError("cannot write " + infer_out);
        }
        out << text << '\n';
      }
    } else if (*print) {
      std::cout << nlohmann::json(resolve_config(print_common)).dump(2) << '\n';
    }
  } catch (const TrainingError& e) {
    std::cerr << "error: " << e.what();
    if (!e.checkpoint().empty()) {
      std::cerr << " (state saved to " << e.checkpoint() << ")";
    }
    std::cerr << '\n';
    return 2;
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
