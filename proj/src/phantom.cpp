#include "ambireg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>
#include <json.hpp>

#include "ambireg/error.hpp"
#include "ambireg/rng.hpp"
#include "binary_io.hpp"

namespace ambireg {

namespace {

// Shape parameters in mm, relative to the volume center.
struct Vertebra {
  double y = 0.0;
  Eigen::Vector3d body_semi_axes;
  Eigen::Vector3d process_dir;
  double process_length = 0.0;
  double process_radius = 0.0;
};

struct Layout {
  std::vector<Vertebra> vertebrae;
  double body_density = 0.0;
  double process_density = 0.0;
  double y_reach = 0.0;  // max distance from a vertebra center that can be non-zero
};

Layout make_layout(const PhantomSpec& spec)
{
  // Seeded jitter keeps phantoms distinct while the family stays recognizable.
  Rng rng(mix_seed(spec.seed, 0x5048414EULL));
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  const double pitch = 34.0 * (1.0 + 0.04 * jitter(rng));
  const double body_scale = 1.0 + 0.05 * jitter(rng);
  const double angle = (35.0 + 3.0 * jitter(rng)) * std::numbers::pi / 180.0;
  const double length_scale = 1.0 + 0.05 * jitter(rng);

  Layout layout;
  layout.body_density = spec.body_density;
  layout.process_density = spec.process_density;
  const int n = spec.n_vertebrae;
  for (int k = 0; k < n; ++k) {
    // Graded sizes break the translational periodicity along y.
    const double grade = n > 1 ? 0.85 + 0.3 * k / double(n - 1) : 1.0;
    Vertebra v;
    v.y = (k - 0.5 * (n - 1)) * pitch;
    v.body_semi_axes = Eigen::Vector3d(11.0, 9.0, 15.0) * grade * body_scale;
    v.process_dir = Eigen::Vector3d(std::cos(angle), 0.0, std::sin(angle));
    v.process_length = 36.0 * grade * length_scale;
    v.process_radius = 4.0 * grade;
    layout.y_reach = std::max({layout.y_reach, v.body_semi_axes.y(), v.process_radius});
    layout.vertebrae.push_back(v);
  }
  return layout;
}

// Density of the unsymmetrized shape at q (mm from center).
double shape_density(const Layout& layout, const Eigen::Vector3d& q)
{
  double d = 0.0;
  for (const auto& v : layout.vertebrae) {
    const double dy = q.y() - v.y;
    if (std::abs(dy) > layout.y_reach) {
      continue;
    }
    const Eigen::Vector3d r(q.x(), dy, q.z());
    if (r.cwiseQuotient(v.body_semi_axes).squaredNorm() <= 1.0) {
      d = std::max(d, layout.body_density);
    }
    const double t = r.dot(v.process_dir);
    if (t >= 0.0 && t <= v.process_length &&
        (r - t * v.process_dir).squaredNorm() <= v.process_radius * v.process_radius) {
      d = std::max(d, layout.process_density);
    }
  }
  return d;
}

double symmetric_density(const Layout& layout, const Eigen::Vector3d& q)
{
  return std::max(shape_density(layout, q), shape_density(layout, Eigen::Vector3d(-q.x(), q.y(), -q.z())));
}

constexpr double kSubOffsets[2] = {-0.25, 0.25};

}  // namespace

Eigen::Vector3d Volume::center_mm() const
{
  return 0.5 * extent_mm();
}

Eigen::Vector3d Volume::extent_mm() const
{
  return {(dims[0] - 1) * spacing[0], (dims[1] - 1) * spacing[1], (dims[2] - 1) * spacing[2]};
}

void validate(const Volume& v)
{
  for (int a = 0; a < 3; ++a) {
    if (v.dims[a] <= 0) {
      throw ParameterError(fmt::format("volume dim {} must be positive, got {}", a, v.dims[a]));
    }
    if (!(v.spacing[a] > 0.0) || !std::isfinite(v.spacing[a])) {
      throw ParameterError(fmt::format("volume spacing {} must be positive, got {}", a, v.spacing[a]));
    }
  }
  if (v.data.size() != v.size()) {
    throw ParameterError(fmt::format("volume data length {} != {}", v.data.size(), v.size()));
  }
  for (float x : v.data) {
    if (!(x >= 0.0f && x <= 1.0f)) {
      throw ParameterError("volume values must be finite and in [0, 1]");
    }
  }
}

std::array<int, 3> rot180_index(const Volume& v, int i, int j, int k)
{
  return {v.dims[0] - 1 - i, j, v.dims[2] - 1 - k};
}

Volume rot180_volume(const Volume& v)
{
  Volume out = v;
  for (int k = 0; k < v.dims[2]; ++k) {
    for (int j = 0; j < v.dims[1]; ++j) {
      for (int i = 0; i < v.dims[0]; ++i) {
        out.data[out.index(v.dims[0] - 1 - i, j, v.dims[2] - 1 - k)] = v.data[v.index(i, j, k)];
      }
    }
  }
  return out;
}

Volume make_phantom(const PhantomSpec& spec)
{
  for (int a = 0; a < 3; ++a) {
    if (spec.dims[a] < 8) {
      throw ParameterError(fmt::format("phantom dims must be >= 8, got {}", spec.dims[a]));
    }
    if (!(spec.spacing[a] > 0.0)) {
      throw ParameterError("phantom spacing must be positive");
    }
  }
  auto in_unit = [](double d) { return d >= 0.0 && d <= 1.0; };
  if (!in_unit(spec.body_density) || !in_unit(spec.process_density)) {
    throw ParameterError("phantom densities must be in [0, 1]");
  }
  if (spec.n_vertebrae < 0) {
    throw ParameterError("n_vertebrae must be >= 0");
  }
  if (spec.marker && (!in_unit(spec.marker->density) || !(spec.marker->radius_mm > 0.0))) {
    throw ParameterError("marker needs density in [0, 1] and positive radius");
  }

  Volume vol;
  vol.dims = spec.dims;
  vol.spacing = spec.spacing;
  vol.data.assign(vol.size(), 0.0f);

  const Layout layout = make_layout(spec);
  const Eigen::Vector3d center = vol.center_mm();
  const Eigen::Vector3d sp(spec.spacing[0], spec.spacing[1], spec.spacing[2]);

  auto voxel_value = [&](int i, int j, int k) {
    double acc = 0.0;
    for (double ox : kSubOffsets) {
      for (double oy : kSubOffsets) {
        for (double oz : kSubOffsets) {
          const Eigen::Vector3d q = Eigen::Vector3d(i + ox, j + oy, k + oz).cwiseProduct(sp) - center;
          double d = symmetric_density(layout, q);
          if (spec.marker && (q - spec.marker->offset_mm).norm() <= spec.marker->radius_mm) {
            d = std::max(d, spec.marker->density);
          }
          acc += d;
        }
      }
    }
    return static_cast<float>(acc / 8.0);
  };

  const auto [nx, ny, nz] = spec.dims;
  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        if (spec.marker) {
          vol.data[vol.index(i, j, k)] = voxel_value(i, j, k);
          continue;
        }
        // Evaluate each rot180 pair once and copy, so symmetry is exact.
        const auto partner = rot180_index(vol, i, j, k);
        const std::size_t self = vol.index(i, j, k);
        const std::size_t other = vol.index(partner[0], partner[1], partner[2]);
        if (self <= other) {
          const float val = voxel_value(i, j, k);
          vol.data[self] = val;
          vol.data[other] = val;
        }
      }
    }
  }
  return vol;
}

double sample_trilinear(const Volume& v, const Eigen::Vector3d& p)
{
  int i0[3];
  double f[3];
  int step[3];
  for (int a = 0; a < 3; ++a) {
    const double x = p[a];
    const int n = v.dims[a];
    if (!(x >= 0.0 && x <= n - 1)) {
      return 0.0;
    }
    if (n == 1) {
      i0[a] = 0;
      f[a] = 0.0;
      step[a] = 0;
      continue;
    }
    i0[a] = std::min(static_cast<int>(x), n - 2);
    f[a] = x - i0[a];
    step[a] = 1;
  }
  const std::size_t sx = step[0];
  const std::size_t sy = std::size_t(step[1]) * v.dims[0];
  const std::size_t sz = std::size_t(step[2]) * v.dims[0] * v.dims[1];
  const float* c = v.data.data() + v.index(i0[0], i0[1], i0[2]);
  const double c00 = c[0] + f[0] * (c[sx] - c[0]);
  const double c10 = c[sy] + f[0] * (c[sy + sx] - c[sy]);
  const double c01 = c[sz] + f[0] * (c[sz + sx] - c[sz]);
  const double c11 = c[sz + sy] + f[0] * (c[sz + sy + sx] - c[sz + sy]);
  const double c0 = c00 + f[1] * (c10 - c00);
  const double c1 = c01 + f[1] * (c11 - c01);
  return c0 + f[2] * (c1 - c0);
}

Volume resample_trilinear(const Volume& v, const std::array<int, 3>& new_dims)
{
  validate(v);
  Volume out;
  out.dims = new_dims;
  double scale[3];
  for (int a = 0; a < 3; ++a) {
    if (new_dims[a] <= 0) {
      throw ParameterError("resample dims must be positive");
    }
    scale[a] = new_dims[a] > 1 ? double(v.dims[a] - 1) / (new_dims[a] - 1) : 0.0;
    out.spacing[a] = new_dims[a] > 1 ? v.spacing[a] * scale[a] : v.spacing[a] * v.dims[a];
  }
  out.data.resize(out.size());
  for (int k = 0; k < new_dims[2]; ++k) {
    for (int j = 0; j < new_dims[1]; ++j) {
      for (int i = 0; i < new_dims[0]; ++i) {
        const Eigen::Vector3d p(i * scale[0], j * scale[1], k * scale[2]);
        out.data[out.index(i, j, k)] = static_cast<float>(sample_trilinear(v, p));
      }
    }
  }
  return out;
}

void save_volume(const Volume& v, const std::filesystem::path& path)
{
  validate(v);
  nlohmann::ordered_json header;
  header["dims"] = v.dims;
  header["spacing_mm"] = v.spacing;
  header["dtype"] = "f32le";
  header["order"] = "x-fastest";
  std::string bytes = header.dump();
  bytes.push_back('\n');
  detail::append_f32le(bytes, v.data);
  detail::write_file(path, bytes);
}

Volume load_volume(const std::filesystem::path& path)
{
  const std::string contents = detail::read_file(path);
  const auto [header_text, payload] = detail::split_header(contents, path);
  Volume v;
  try {
    const auto header = nlohmann::json::parse(header_text);
    if (header.at("dtype").get<std::string>() != "f32le" ||
        header.at("order").get<std::string>() != "x-fastest") {
      throw FormatError("unsupported volume dtype/order in " + path.string());
    }
    v.dims = header.at("dims").get<std::array<int, 3>>();
    v.spacing = header.at("spacing_mm").get<std::array<double, 3>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("bad volume header in {}: {}", path.string(), e.what()));
  }
  for (int a = 0; a < 3; ++a) {
    if (v.dims[a] <= 0 || !(v.spacing[a] > 0.0)) {
      throw FormatError("non-positive dims or spacing in " + path.string());
    }
  }
  if (payload.size() != v.size() * sizeof(float)) {
    throw FormatError(fmt::format("volume payload is {} bytes, header implies {} ({})", payload.size(),
                                  v.size() * sizeof(float), path.string()));
  }
  v.data = detail::parse_f32le(payload);
  try {
    validate(v);
  } catch (const ParameterError& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return v;
}

}  // namespace ambireg
