#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "ambireg/geometry.hpp"
#include "ambireg/phantom.hpp"
#include "ambireg/rng.hpp"

namespace ambireg {

/// Cone-beam C-arm. At the identity pose the source sits on the -x side of the
/// volume center and the beam runs along +x; detector columns follow +z and rows +y.
struct CameraConfig {
  double source_to_detector_mm = 1000.0;
  double source_to_isocenter_mm = 600.0;
  std::array<int, 2> detector_px{64, 64};  ///< width (columns), height (rows)
  double pixel_pitch_mm = 4.0;
  double step_mm = 0.0;  ///< ray sampling step; <= 0 selects half the minimum voxel spacing
  double norm_constant = 1.0;
};

void validate(const CameraConfig& cam);

struct Image2D {
  std::array<int, 2> dims{0, 0};  ///< width, height
  std::vector<float> data;        ///< row-major

  std::size_t size() const { return std::size_t(dims[0]) * dims[1]; }
  float at(int col, int row) const { return data[std::size_t(row) * dims[0] + col]; }
  double mean() const;

  bool operator==(const Image2D&) const = default;
};

/// Pixel-wise line integrals of trilinear density (fixed-step midpoint rule over
/// the ray/voxel-box chord), divided by cam.norm_constant.
Image2D render_drr(const Volume& v, const Pose& p, const CameraConfig& cam);

/// Mean absolute per-pixel difference.
double l1_image_distance(const Image2D& a, const Image2D& b);

struct AugmentParams {
  double noise_sigma = 0.0;
  double contrast_gamma = 1.0;
};

/// sigma ~ U[0, 0.02], gamma ~ U[0.8, 1.25].
AugmentParams draw_augment_params(Rng& rng);

/// x -> clamp(gamma * (x + noise - 0.5) + 0.5, 0, 1), noise ~ N(0, sigma^2) i.i.d.
void augment_values(std::vector<float>& values, const AugmentParams& params, Rng& rng);

Image2D augment(const Image2D& img, Rng& rng);
Image2D augment(const Image2D& img, const AugmentParams& params, Rng& rng);
Volume augment(const Volume& vol, Rng& rng);

/// Percentile (0..100) of all raw pixel values across a calibration batch.
double calibrate_norm_constant(const std::vector<Image2D>& raw_images, double percentile = 99.0);

void save_image(const Image2D& img, const std::filesystem::path& path);
Image2D load_image(const std::filesystem::path& path);

/// 8-bit binary PGM for viewing, scaled to [0, max]. Never read back.
void export_pgm(const Image2D& img, const std::filesystem::path& path);

}  // namespace ambireg
