#include "ambireg/drr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>
#include <json.hpp>

#include "ambireg/error.hpp"
#include "binary_io.hpp"

namespace ambireg {

namespace {

// Slab test against the axis-aligned box [0, hi]. Returns false on a miss.
bool clip_ray(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, const Eigen::Vector3d& hi,
              double& t0, double& t1)
{
  t0 = 0.0;
  t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (origin[a] < 0.0 || origin[a] > hi[a]) {
        return false;
      }
      continue;
    }
    double ta = (0.0 - origin[a]) / dir[a];
    double tb = (hi[a] - origin[a]) / dir[a];
    if (ta > tb) {
      std::swap(ta, tb);
    }
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return t1 > t0;
}

}  // namespace

void validate(const CameraConfig& cam)
{
  if (!(cam.source_to_detector_mm > 0.0) || !(cam.source_to_isocenter_mm > 0.0) ||
      !(cam.pixel_pitch_mm > 0.0) || !(cam.norm_constant > 0.0)) {
    throw ConfigError("camera distances, pixel pitch and norm_constant must be positive");
  }
  if (!(cam.source_to_isocenter_mm < cam.source_to_detector_mm)) {
    throw ConfigError("camera needs source_to_isocenter < source_to_detector");
  }
  if (cam.detector_px[0] <= 0 || cam.detector_px[1] <= 0) {
    throw ConfigError("detector size must be positive");
  }
}

double Image2D::mean() const
{
  double acc = 0.0;
  for (float x : data) {
    acc += x;
  }
  return data.empty() ? 0.0 : acc / data.size();
}

Image2D render_drr(const Volume& v, const Pose& p, const CameraConfig& cam)
{
  validate(cam);
  if (v.data.size() != v.size()) {
    throw ParameterError("volume data length does not match dims");
  }
  const Eigen::Vector3d center = v.center_mm();
  const Eigen::Vector3d box = v.extent_mm();
  const RigidTransform xf = pose_to_transform(p, center);

  const Eigen::Vector3d source = xf.apply(center - Eigen::Vector3d(cam.source_to_isocenter_mm, 0.0, 0.0));
  if ((source.array() >= 0.0).all() && (source.array() <= box.array()).all()) {
    throw ConfigError("degenerate camera: source lies inside the volume bounding box");
  }
  const Eigen::Vector3d det_center = xf.apply(
      center + Eigen::Vector3d(cam.source_to_detector_mm - cam.source_to_isocenter_mm, 0.0, 0.0));
  const Eigen::Vector3d e_col = xf.apply_rotation(Eigen::Vector3d::UnitZ());
  const Eigen::Vector3d e_row = xf.apply_rotation(Eigen::Vector3d::UnitY());

  const double min_spacing = std::min({v.spacing[0], v.spacing[1], v.spacing[2]});
  const double step = cam.step_mm > 0.0 ? cam.step_mm : 0.5 * min_spacing;
  const Eigen::Vector3d inv_spacing(1.0 / v.spacing[0], 1.0 / v.spacing[1], 1.0 / v.spacing[2]);

  const int w = cam.detector_px[0];
  const int h = cam.detector_px[1];
  Image2D img;
  img.dims = {w, h};
  img.data.resize(img.size());
  for (int row = 0; row < h; ++row) {
    for (int col = 0; col < w; ++col) {
      const Eigen::Vector3d pixel = det_center + (col + 0.5 - 0.5 * w) * cam.pixel_pitch_mm * e_col +
                                    (row + 0.5 - 0.5 * h) * cam.pixel_pitch_mm * e_row;
      const Eigen::Vector3d dir = (pixel - source).normalized();
      double t0, t1;
      double integral = 0.0;
      if (clip_ray(source, dir, box, t0, t1)) {
        const double chord = t1 - t0;
        const int n = std::max(1, static_cast<int>(std::ceil(chord / step)));
        const double dt = chord / n;
        double acc = 0.0;
        for (int s = 0; s < n; ++s) {
          const Eigen::Vector3d q = source + (t0 + (s + 0.5) * dt) * dir;
          acc += sample_trilinear(v, q.cwiseProduct(inv_spacing));
        }
        integral = acc * dt;
      }
      img.data[std::size_t(row) * w + col] = static_cast<float>(integral / cam.norm_constant);
    }
  }
  return img;
}

double l1_image_distance(const Image2D& a, const Image2D& b)
{
  if (a.dims != b.dims || a.data.size() != b.data.size()) {
    throw ParameterError(fmt::format("image dims differ: {}x{} vs {}x{}", a.dims[0], a.dims[1], b.dims[0],
                                     b.dims[1]));
  }
  if (a.data.empty()) {
    throw ParameterError("empty images");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    acc += std::abs(double(a.data[i]) - double(b.data[i]));
  }
  return acc / a.data.size();
}

AugmentParams draw_augment_params(Rng& rng)
{
  std::uniform_real_distribution<double> sigma(0.0, 0.02);
  std::uniform_real_distribution<double> gamma(0.8, 1.25);
  AugmentParams p;
  p.noise_sigma = sigma(rng);
  p.contrast_gamma = gamma(rng);
  return p;
}

void augment_values(std::vector<float>& values, const AugmentParams& params, Rng& rng)
{
  std::normal_distribution<double> noise(0.0, 1.0);
  const bool add_noise = params.noise_sigma > 0.0;
  for (float& x : values) {
    double y = x;
    if (add_noise) {
      y += params.noise_sigma * noise(rng);
    }
    y = params.contrast_gamma * (y - 0.5) + 0.5;
    x = static_cast<float>(std::clamp(y, 0.0, 1.0));
  }
}

Image2D augment(const Image2D& img, const AugmentParams& params, Rng& rng)
{
  Image2D out = img;
  augment_values(out.data, params, rng);
  return out;
}

Image2D augment(const Image2D& img, Rng& rng)
{
  const AugmentParams params = draw_augment_params(rng);
  return augment(img, params, rng);
}

Volume augment(const Volume& vol, Rng& rng)
{
  const AugmentParams params = draw_augment_params(rng);
  Volume out = vol;
  augment_values(out.data, params, rng);
  return out;
}

double calibrate_norm_constant(const std::vector<Image2D>& raw_images, double percentile)
{
  std::vector<float> all;
  for (const auto& img : raw_images) {
    all.insert(all.end(), img.data.begin(), img.data.end());
  }
  if (all.empty()) {
    throw ParameterError("calibration batch is empty");
  }
  const auto rank = static_cast<std::size_t>(std::clamp(percentile / 100.0, 0.0, 1.0) * (all.size() - 1));
  std::nth_element(all.begin(), all.begin() + rank, all.end());
  const double value = all[rank];
  if (!(value > 0.0)) {
    throw NumericError("calibration percentile is zero; the calibration renders are empty");
  }
  return value;
}

void save_image(const Image2D& img, const std::filesystem::path& path)
{
  if (img.data.size() != img.size()) {
    throw ParameterError("image data length does not match dims");
  }
  nlohmann::ordered_json header;
  header["dims"] = img.dims;
  header["dtype"] = "f32le";
  std::string bytes = header.dump();
  bytes.push_back('\n');
  detail::append_f32le(bytes, img.data);
  detail::write_file(path, bytes);
}

Image2D load_image(const std::filesystem::path& path)
{
  const std::string contents = detail::read_file(path);
  const auto [header_text, payload] = detail::split_header(contents, path);
  Image2D img;
  try {
    const auto header = nlohmann::json::parse(header_text);
    if (header.at("dtype").get<std::string>() != "f32le") {
      throw FormatError("unsupported image dtype in " + path.string());
    }
    img.dims = header.at("dims").get<std::array<int, 2>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("bad image header in {}: {}", path.string(), e.what()));
  }
  if (img.dims[0] <= 0 || img.dims[1] <= 0) {
    throw FormatError("non-positive image dims in " + path.string());
  }
  if (payload.size() != img.size() * sizeof(float)) {
    throw FormatError(fmt::format("image payload is {} bytes, header implies {} ({})", payload.size(),
                                  img.size() * sizeof(float), path.string()));
  }
  img.data = detail::parse_f32le(payload);
  for (float x : img.data) {
    if (!std::isfinite(x)) {
      throw FormatError("non-finite pixel in " + path.string());
    }
  }
  return img;
}

void export_pgm(const Image2D& img, const std::filesystem::path& path)
{
  const float max_value = img.data.empty() ? 0.0f : *std::max_element(img.data.begin(), img.data.end());
  std::string bytes = fmt::format("P5\n{} {}\n255\n", img.dims[0], img.dims[1]);
  for (float x : img.data) {
    const double scaled = max_value > 0.0f ? 255.0 * x / max_value : 0.0;
    bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(std::lround(scaled), 0L, 255L))));
  }
  detail::write_file(path, bytes);
}

}  // namespace ambireg
