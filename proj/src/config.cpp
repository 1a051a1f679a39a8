#include "ambireg/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "ambireg/error.hpp"

namespace ambireg {

using nlohmann::json;

namespace {

/// Reads optional keys of one JSON object and rejects anything it was not asked for.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where))
  {
    if (!j_.is_object()) {
      throw ConfigError(fmt::format("{} must be a JSON object", where_));
    }
  }

  template <class T>
  Fields& get(const char* key, T& out)
  {
    known_.insert(key);
    if (const auto it = j_.find(key); it != j_.end()) {
      try {
        out = it->template get<T>();
      } catch (const json::exception& e) {
        throw ConfigError(fmt::format("{}.{}: {}", where_, key, e.what()));
      }
    }
    return *this;
  }

  void done() const
  {
    for (const auto& [key, _] : j_.items()) {
      if (!known_.count(key)) {
        throw ConfigError(fmt::format("unknown config key {}.{}", where_, key));
      }
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> known_;
};

std::array<double, 3> vec3(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

}  // namespace

StageConfig RunConfig::default_stage1()
{
  StageConfig s;
  s.epochs = 40;
  return s;
}

StageConfig RunConfig::default_stage2()
{
  StageConfig s;
  s.epochs = 120;
  return s;
}

bool phantom_is_marked(int index, double marked_fraction)
{
  return std::floor((index + 1) * marked_fraction) > std::floor(index * marked_fraction);
}

void validate(const DataConfig& c)
{
  if (c.n_train_phantoms < 1 || c.n_test_phantoms < 0) {
    throw ConfigError("data needs at least one training phantom and a non-negative test count");
  }
  if (!(c.marked_fraction >= 0.0 && c.marked_fraction <= 1.0)) {
    throw ConfigError("data.marked_fraction must lie in [0, 1]");
  }
  if (c.poses_per_phantom < 1 || c.calibration_renders < 1) {
    throw ConfigError("data.poses_per_phantom and data.calibration_renders must be positive");
  }
  if (!(c.marker.radius_mm > 0.0) || !(c.marker.density > 0.0 && c.marker.density <= 1.0)) {
    throw ConfigError("data.marker needs a positive radius and density in (0, 1]");
  }
}

void validate(const StageConfig& c)
{
  if (c.epochs < 0 || c.batch_size < 1 || !(c.lr > 0.0) || c.decay_every < 1 || !(c.decay_factor > 0.0) ||
      !(c.weight_decay >= 0.0)) {
    throw ConfigError("invalid training stage settings");
  }
}

void validate(const RunConfig& c)
{
  validate(c.data);
  validate(c.sampler);
  validate(c.camera);
  validate(c.condnet);
  validate(c.flow);
  validate(c.stage1);
  validate(c.stage2);
  if (c.flow.cond_dim != c.condnet.cond_dim) {
    throw ConfigError("flow.cond_dim must equal condnet.cond_dim");
  }
  if (c.modes.n_samples < 50) {
    throw ConfigError("modes.n_samples must be at least 50");
  }
  if (std::isnan(c.modes.threshold)) {
    throw ConfigError("modes.threshold must be a number");
  }
  if (c.modes.gmm.restarts < 1 || c.modes.gmm.max_iterations < 1 || !(c.modes.gmm.covariance_reg >= 0.0)) {
    throw ConfigError("invalid modes.gmm settings");
  }
  if (c.eval.max_cases < 0 || c.eval.histogram_cases < 0) {
    throw ConfigError("eval counts must be non-negative");
  }
}

void to_json(json& j, const Marker& m)
{
  j = json{{"offset_mm", vec3(m.offset_mm)}, {"radius_mm", m.radius_mm}, {"density", m.density}};
}

void from_json(const json& j, Marker& m)
{
  std::array<double, 3> off = vec3(m.offset_mm);
  Fields(j, "marker").get("offset_mm", off).get("radius_mm", m.radius_mm).get("density", m.density).done();
  m.offset_mm = Eigen::Vector3d(off[0], off[1], off[2]);
}

void to_json(json& j, const PhantomSpec& s)
{
  j = json{{"dims", s.dims},
           {"spacing_mm", s.spacing},
           {"n_vertebrae", s.n_vertebrae},
           {"body_density", s.body_density},
           {"process_density", s.process_density}};
}

void from_json(const json& j, PhantomSpec& s)
{
  Fields(j, "phantom")
      .get("dims", s.dims)
      .get("spacing_mm", s.spacing)
      .get("n_vertebrae", s.n_vertebrae)
      .get("body_density", s.body_density)
      .get("process_density", s.process_density)
      .done();
}

void to_json(json& j, const PoseSamplerConfig& c)
{
  j = json{{"t_range_mm", c.t_range},
           {"rot_range_deg", c.rot_range_deg},
           {"rot_step_deg", c.rot_step_deg},
           {"flip_prob", c.flip_prob}};
}

void from_json(const json& j, PoseSamplerConfig& c)
{
  Fields(j, "sampler")
      .get("t_range_mm", c.t_range)
      .get("rot_range_deg", c.rot_range_deg)
      .get("rot_step_deg", c.rot_step_deg)
      .get("flip_prob", c.flip_prob)
      .done();
}

void to_json(json& j, const CameraConfig& c)
{
  j = json{{"source_to_detector_mm", c.source_to_detector_mm},
           {"source_to_isocenter_mm", c.source_to_isocenter_mm},
           {"detector_px", c.detector_px},
           {"pixel_pitch_mm", c.pixel_pitch_mm},
           {"step_mm", c.step_mm},
           {"norm_constant", c.norm_constant}};
}

void from_json(const json& j, CameraConfig& c)
{
  Fields(j, "camera")
      .get("source_to_detector_mm", c.source_to_detector_mm)
      .get("source_to_isocenter_mm", c.source_to_isocenter_mm)
      .get("detector_px", c.detector_px)
      .get("pixel_pitch_mm", c.pixel_pitch_mm)
      .get("step_mm", c.step_mm)
      .get("norm_constant", c.norm_constant)
      .done();
}

void to_json(json& j, const CondNetConfig& c)
{
  j = json{{"volume_input_dims", c.volume_input_dims},
           {"image_input_dims", c.image_input_dims},
           {"blocks", c.blocks},
           {"volume_channels", c.volume_channels},
           {"image_channels", c.image_channels},
           {"image_pooling", c.image_pooling},
           {"fusion_hidden", c.fusion_hidden},
           {"cond_dim", c.cond_dim},
           {"dropout_rate", c.dropout_rate}};
}

void from_json(const json& j, CondNetConfig& c)
{
  Fields(j, "condnet")
      .get("volume_input_dims", c.volume_input_dims)
      .get("image_input_dims", c.image_input_dims)
      .get("blocks", c.blocks)
      .get("volume_channels", c.volume_channels)
      .get("image_channels", c.image_channels)
      .get("image_pooling", c.image_pooling)
      .get("fusion_hidden", c.fusion_hidden)
      .get("cond_dim", c.cond_dim)
      .get("dropout_rate", c.dropout_rate)
      .done();
}

void to_json(json& j, const FlowConfig& c)
{
  j = json{{"depth", c.depth},
           {"hidden", c.hidden},
           {"hidden_layers", c.hidden_layers},
           {"clamp_alpha", c.clamp_alpha},
           {"passive_dims", c.passive_dims},
           {"cond_dim", c.cond_dim}};
}

void from_json(const json& j, FlowConfig& c)
{
  Fields(j, "flow")
      .get("depth", c.depth)
      .get("hidden", c.hidden)
      .get("hidden_layers", c.hidden_layers)
      .get("clamp_alpha", c.clamp_alpha)
      .get("passive_dims", c.passive_dims)
      .get("cond_dim", c.cond_dim)
      .done();
}

void to_json(json& j, const StageConfig& c)
{
  j = json{{"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"lr", c.lr},
           {"decay_every", c.decay_every},
           {"decay_factor", c.decay_factor},
           {"weight_decay", c.weight_decay},
           {"augment", c.augment},
           {"half_turn", c.half_turn}};
}

void from_json(const json& j, StageConfig& c)
{
  Fields(j, "stage")
      .get("epochs", c.epochs)
      .get("batch_size", c.batch_size)
      .get("lr", c.lr)
      .get("decay_every", c.decay_every)
      .get("decay_factor", c.decay_factor)
      .get("weight_decay", c.weight_decay)
      .get("augment", c.augment)
      .get("half_turn", c.half_turn)
      .done();
}

void to_json(json& j, const GmmOptions& c)
{
  j = json{{"covariance_reg", c.covariance_reg},
           {"tolerance", c.tolerance},
           {"max_iterations", c.max_iterations},
           {"restarts", c.restarts}};
}

void from_json(const json& j, GmmOptions& c)
{
  Fields(j, "modes.gmm")
      .get("covariance_reg", c.covariance_reg)
      .get("tolerance", c.tolerance)
      .get("max_iterations", c.max_iterations)
      .get("restarts", c.restarts)
      .done();
}

void to_json(json& j, const DataConfig& c)
{
  j = json{{"n_train_phantoms", c.n_train_phantoms},
           {"n_test_phantoms", c.n_test_phantoms},
           {"marked_fraction", c.marked_fraction},
           {"poses_per_phantom", c.poses_per_phantom},
           {"calibration_renders", c.calibration_renders},
           {"phantom", c.phantom},
           {"marker", c.marker}};
}

void from_json(const json& j, DataConfig& c)
{
  Fields(j, "data")
      .get("n_train_phantoms", c.n_train_phantoms)
      .get("n_test_phantoms", c.n_test_phantoms)
      .get("marked_fraction", c.marked_fraction)
      .get("poses_per_phantom", c.poses_per_phantom)
      .get("calibration_renders", c.calibration_renders)
      .get("phantom", c.phantom)
      .get("marker", c.marker)
      .done();
}

void to_json(json& j, const ModesConfig& c)
{
  j = json{{"threshold", c.threshold}, {"n_samples", c.n_samples}, {"gmm", c.gmm}};
}

void from_json(const json& j, ModesConfig& c)
{
  Fields(j, "modes").get("threshold", c.threshold).get("n_samples", c.n_samples).get("gmm", c.gmm).done();
}

void to_json(json& j, const EvalConfig& c)
{
  j = json{{"max_cases", c.max_cases}, {"histogram_cases", c.histogram_cases}, {"svg", c.svg}};
}

void from_json(const json& j, EvalConfig& c)
{
  Fields(j, "eval").get("max_cases", c.max_cases).get("histogram_cases", c.histogram_cases).get("svg", c.svg).done();
}

void to_json(json& j, const PathsConfig& c) { j = json{{"data_dir", c.data_dir}, {"run_dir", c.run_dir}}; }

void from_json(const json& j, PathsConfig& c)
{
  Fields(j, "paths").get("data_dir", c.data_dir).get("run_dir", c.run_dir).done();
}

void to_json(json& j, const RunConfig& c)
{
  j = json{{"seed", c.seed},     {"data", c.data},     {"sampler", c.sampler}, {"camera", c.camera},
           {"condnet", c.condnet}, {"flow", c.flow},   {"stage1", c.stage1},   {"stage2", c.stage2},
           {"modes", c.modes},   {"eval", c.eval},     {"paths", c.paths}};
}

void from_json(const json& j, RunConfig& c)
{
  Fields(j, "config")
      .get("seed", c.seed)
      .get("data", c.data)
      .get("sampler", c.sampler)
      .get("camera", c.camera)
      .get("condnet", c.condnet)
      .get("flow", c.flow)
      .get("stage1", c.stage1)
      .get("stage2", c.stage2)
      .get("modes", c.modes)
      .get("eval", c.eval)
      .get("paths", c.paths)
      .done();
}

RunConfig parse_run_config(const json& j)
{
  RunConfig c;
  from_json(j, c);
  validate(c);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open config " + path.string());
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("config {} is not valid JSON: {}", path.string(), e.what()));
  }
  return parse_run_config(j);
}

RunConfig apply_overrides(const RunConfig& base, const std::vector<std::string>& assignments)
{
  json j = base;
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override must look like key.path=value, got '" + a + "'");
    }
    const std::string key = a.substr(0, eq);
    const std::string text = a.substr(eq + 1);
    json value;
    try {
      value = json::parse(text);
    } catch (const json::parse_error&) {
      value = text;
    }
    std::string pointer = "/" + key;
    for (auto& ch : pointer) {
      if (ch == '.') {
        ch = '/';
      }
    }
    const json::json_pointer ptr(pointer);
    if (!j.contains(ptr)) {
      throw ConfigError("unknown config key " + key);
    }
    j[ptr] = value;
  }
  return parse_run_config(j);
}

std::filesystem::path resolve_output_path(const std::string& p)
{
  const std::filesystem::path path(p);
  if (path.is_absolute()) {
    return path;
  }
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) {
    return std::filesystem::path(root) / path;
  }
  return path;
}

}  // namespace ambireg
