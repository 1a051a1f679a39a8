#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ambireg/condnet.hpp"
#include "ambireg/config.hpp"
#include "ambireg/drr.hpp"
#include "ambireg/geometry.hpp"
#include "ambireg/phantom.hpp"

namespace ambireg {

struct ManifestRecord {
  std::string volume_path;  ///< relative to the manifest directory
  std::string image_path;
  Pose pose;
  std::uint64_t seed = 0;   ///< pose-stream draw index
  bool marked = false;
};

/// JSONL file: a header line {"kind":"header", camera, norm_constant, split}
/// followed by one record per line.
struct DatasetManifest {
  CameraConfig camera;  ///< includes the shared norm_constant
  std::string split;
  std::vector<ManifestRecord> records;
  std::filesystem::path base_dir;  ///< where relative record paths resolve
};

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Confirms every referenced file exists and parses, before any compute.
void check_manifest_integrity(const DatasetManifest& m);

std::filesystem::path record_volume_path(const DatasetManifest& m, const ManifestRecord& r);
std::filesystem::path record_image_path(const DatasetManifest& m, const ManifestRecord& r);

/// Seed streams derived from the run seed.
enum class Stream : std::uint64_t { train_poses = 1, test_poses = 2, calibration = 3, train_phantoms = 4, test_phantoms = 5 };
std::uint64_t stream_seed(std::uint64_t seed, Stream s);

PhantomSpec phantom_spec(const RunConfig& cfg, bool test_split, int index);

struct GeneratedData {
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
  double norm_constant = 1.0;
};

/// Phantoms, calibration, poses and DRRs for both splits, written under out_dir.
GeneratedData generate_dataset(const RunConfig& cfg, const std::filesystem::path& out_dir);

/// Loads the manifest volumes once (resampled to the conditioning resolution)
/// and pairs every image with its normalized pose target.
TrainingSet load_training_set(const DatasetManifest& m, const CondNetConfig& cfg);

}  // namespace ambireg
