#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "ambireg/commands.hpp"
#include "ambireg/config.hpp"
#include "ambireg/drr.hpp"
#include "ambireg/error.hpp"
#include "ambireg/modes.hpp"
#include "ambireg/phantom.hpp"

namespace py = pybind11;
using json = nlohmann::json;
using namespace ambireg;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

RunConfig config_from(const std::string& text)
{
  return text.empty() ? RunConfig{} : parse_run_config(json::parse(text));
}

// Volumes cross the boundary as (nz, ny, nx) arrays, x fastest.
FloatArray volume_array(const Volume& v)
{
  FloatArray out({v.dims[2], v.dims[1], v.dims[0]});
  std::copy(v.data.begin(), v.data.end(), out.mutable_data());
  return out;
}

Volume array_volume(const FloatArray& a, const std::array<double, 3>& spacing)
{
  if (a.ndim() != 3) {
    throw ParameterError("volume array must have shape (nz, ny, nx)");
  }
  Volume v;
  v.dims = {static_cast<int>(a.shape(2)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0))};
  v.spacing = spacing;
  v.data.assign(a.data(), a.data() + a.size());
  validate(v);
  return v;
}

FloatArray image_array(const Image2D& img)
{
  FloatArray out({img.dims[1], img.dims[0]});
  std::copy(img.data.begin(), img.data.end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m)
{
  m.doc() = "Pose-posterior registration with conditional invertible networks";

  py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def(
      "default_config", [] { return json(RunConfig{}).dump(); },
      "Default run configuration as a JSON string.");

  m.def(
      "resolve_config",
      [](const std::string& config, const std::vector<std::string>& overrides) {
        return json(apply_overrides(config_from(config), overrides)).dump();
      },
      py::arg("config") = "", py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "make_phantom",
      [](const std::string& spec_json, std::uint64_t seed, const std::string& marker_json) {
        PhantomSpec spec = json::parse(spec_json).get<PhantomSpec>();
        spec.seed = seed;
        if (!marker_json.empty()) {
          spec.marker = json::parse(marker_json).get<Marker>();
        }
        const Volume v = make_phantom(spec);
        return py::make_tuple(volume_array(v), py::make_tuple(v.spacing[0], v.spacing[1], v.spacing[2]));
      },
      py::arg("spec"), py::arg("seed") = 0, py::arg("marker") = "",
      "Phantom shape JSON, seed and optional marker JSON -> (array (nz, ny, nx), spacing).");

  m.def(
      "rot180_volume",
      [](const FloatArray& a, std::array<double, 3> spacing) {
        return volume_array(rot180_volume(array_volume(a, spacing)));
      },
      py::arg("volume"), py::arg("spacing"));

  m.def(
      "render_drr",
      [](const FloatArray& a, std::array<double, 3> spacing, const std::string& pose_json,
         const std::string& camera_json) {
        const Volume v = array_volume(a, spacing);
        const Pose p = json::parse(pose_json).get<Pose>();
        CameraConfig cam;
        if (!camera_json.empty()) {
          cam = json::parse(camera_json).get<CameraConfig>();
        }
        Image2D img;
        {
          py::gil_scoped_release release;
          img = render_drr(v, p, cam);
        }
        return image_array(img);
      },
      py::arg("volume"), py::arg("spacing"), py::arg("pose"), py::arg("camera") = "",
      "Line-integral projection, returned as (height, width).");

  m.def(
      "detect_modes",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> samples, double threshold,
         std::uint64_t seed) {
        if (samples.ndim() != 2 || samples.shape(1) != kPoseDim) {
          throw ParameterError("samples must have shape (n, 5)");
        }
        Eigen::MatrixXd x(samples.shape(0), kPoseDim);
        auto r = samples.unchecked<2>();
        for (py::ssize_t i = 0; i < r.shape(0); ++i) {
          for (int d = 0; d < kPoseDim; ++d) x(i, d) = r(i, d);
        }
        return json(detect_modes(x, threshold, seed)).dump();
      },
      py::arg("samples"), py::arg("threshold") = 2000.0, py::arg("seed") = 0,
      "Normalized pose samples -> mode report JSON.");

  m.def(
      "gen_data",
      [](const std::string& config, const std::string& data_dir) {
        GeneratedData g;
        {
          py::gil_scoped_release release;
          g = cmd_gen_data(config_from(config), data_dir);
        }
        return json{{"train_manifest", g.train_manifest.string()},
                    {"test_manifest", g.test_manifest.string()},
                    {"norm_constant", g.norm_constant}}
            .dump();
      },
      py::arg("config"), py::arg("data_dir"));

  m.def(
      "train",
      [](const std::string& config, const std::string& manifest, const std::string& run_dir, bool resume,
         std::optional<int> stop_after) {
        TrainOptions opts;
        opts.resume = resume;
        opts.stop_after = stop_after;
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = cmd_train(config_from(config), manifest, run_dir, opts);
        }
        return json{{"stage1_loss", r.stage1_loss},
                    {"stage2_loss", r.stage2_loss},
                    {"finished", r.finished},
                    {"model", r.model_stem.string()}}
            .dump();
      },
      py::arg("config"), py::arg("manifest"), py::arg("run_dir"), py::arg("resume") = true,
      py::arg("stop_after") = py::none());

  m.def(
      "evaluate",
      [](const std::string& config, const std::string& model, const std::string& manifest,
         const std::string& out_dir) {
        EvalSummary s;
        {
          py::gil_scoped_release release;
          s = cmd_eval(config_from(config), model, manifest, out_dir);
        }
        return json(s).dump();
      },
      py::arg("config"), py::arg("model"), py::arg("manifest"), py::arg("out_dir"));

  m.def(
      "infer",
      [](const std::string& config, const std::string& model, const std::string& volume_path,
         const std::string& image_path, std::uint64_t seed) {
        ModeReport r;
        {
          py::gil_scoped_release release;
          r = cmd_infer(config_from(config), model, volume_path, image_path, seed);
        }
        return json(r).dump();
      },
      py::arg("config"), py::arg("model"), py::arg("volume"), py::arg("image"), py::arg("seed") = 0);
}
