#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ambireg/cinn.hpp"
#include "ambireg/condnet.hpp"
#include "ambireg/drr.hpp"
#include "ambireg/geometry.hpp"
#include "ambireg/modes.hpp"
#include "ambireg/phantom.hpp"

namespace ambireg {

/// Phantom population. Every phantom shares `phantom` except its seed; phantoms
/// are interleaved so that a `marked_fraction` share carries `marker`.
struct DataConfig {
  int n_train_phantoms = 4;
  int n_test_phantoms = 2;
  double marked_fraction = 0.5;
  int poses_per_phantom = 64;
  int calibration_renders = 100;
  PhantomSpec phantom;
  Marker marker;
};

struct ModesConfig {
  double threshold = 2000.0;
  int n_samples = 4096;
  GmmOptions gmm;
};

struct EvalConfig {
  int max_cases = 0;        ///< 0 evaluates the whole test manifest
  int histogram_cases = 4;  ///< lao posterior histograms written for the first N cases
  bool svg = true;
};

/// Relative paths resolve against the output root (AMBIREG_OUTPUT_ROOT or the
/// working directory).
struct PathsConfig {
  std::string data_dir = "data";
  std::string run_dir = "run";
};

struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  PoseSamplerConfig sampler;
  CameraConfig camera;
  CondNetConfig condnet;
  FlowConfig flow;
  StageConfig stage1 = default_stage1();
  StageConfig stage2 = default_stage2();
  ModesConfig modes;
  EvalConfig eval;
  PathsConfig paths;

  static StageConfig default_stage1();
  static StageConfig default_stage2();
};

void validate(const DataConfig& cfg);
void validate(const StageConfig& cfg);
void validate(const RunConfig& cfg);

/// Whether phantom `index` of a population carries the marker.
bool phantom_is_marked(int index, double marked_fraction);

void to_json(nlohmann::json& j, const Marker& m);
void from_json(const nlohmann::json& j, Marker& m);
void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);
void to_json(nlohmann::json& j, const PoseSamplerConfig& c);
void from_json(const nlohmann::json& j, PoseSamplerConfig& c);
void to_json(nlohmann::json& j, const CameraConfig& c);
void from_json(const nlohmann::json& j, CameraConfig& c);
void to_json(nlohmann::json& j, const CondNetConfig& c);
void from_json(const nlohmann::json& j, CondNetConfig& c);
void to_json(nlohmann::json& j, const FlowConfig& c);
void from_json(const nlohmann::json& j, FlowConfig& c);
void to_json(nlohmann::json& j, const StageConfig& c);
void from_json(const nlohmann::json& j, StageConfig& c);
void to_json(nlohmann::json& j, const GmmOptions& c);
void from_json(const nlohmann::json& j, GmmOptions& c);
void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);
void to_json(nlohmann::json& j, const ModesConfig& c);
void from_json(const nlohmann::json& j, ModesConfig& c);
void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);
void to_json(nlohmann::json& j, const PathsConfig& c);
void from_json(const nlohmann::json& j, PathsConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// Partial documents are allowed: missing keys keep their defaults, unknown keys
/// throw ConfigError. The result is validated.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Applies `dotted.key=value` overrides. Values parse as JSON when possible and
/// fall back to plain strings.
RunConfig apply_overrides(const RunConfig& base, const std::vector<std::string>& assignments);

inline constexpr const char* kOutputRootEnv = "AMBIREG_OUTPUT_ROOT";

/// Absolute paths pass through; relative ones are joined to the output root.
std::filesystem::path resolve_output_path(const std::string& p);

}  // namespace ambireg
