#include "ambireg/dataset.hpp"

#include <fstream>
#include <map>

#include <fmt/format.h>
#include <json.hpp>

#include "ambireg/error.hpp"
#include "ambireg/rng.hpp"

namespace ambireg {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string record_line(const ManifestRecord& r)
{
  json j{{"volume_path", r.volume_path},
         {"image_path", r.image_path},
         {"pose", r.pose},
         {"seed", r.seed},
         {"phantom", r.marked ? "marked" : "symmetric"}};
  return j.dump();
}

ManifestRecord parse_record(const json& j)
{
  ManifestRecord r;
  r.volume_path = j.at("volume_path").get<std::string>();
  r.image_path = j.at("image_path").get<std::string>();
  r.pose = j.at("pose").get<Pose>();
  r.seed = j.at("seed").get<std::uint64_t>();
  const std::string kind = j.at("phantom").get<std::string>();
  if (kind != "marked" && kind != "symmetric") {
    throw FormatError("manifest phantom must be symmetric or marked, got " + kind);
  }
  r.marked = kind == "marked";
  return r;
}

}  // namespace

void save_manifest(const DatasetManifest& m, const fs::path& path)
{
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write manifest " + path.string());
  }
  json header{{"kind", "header"}, {"split", m.split}, {"camera", m.camera}, {"norm_constant", m.camera.norm_constant}};
  out << header.dump() << '\n';
  for (const auto& r : m.records) {
    out << record_line(r) << '\n';
  }
  if (!out) {
    throw IoError("failed writing manifest " + path.string());
  }
}

DatasetManifest load_manifest(const fs::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open manifest " + path.string());
  }
  DatasetManifest m;
  m.base_dir = path.parent_path();
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    try {
      const json j = json::parse(line);
      if (!have_header) {
        if (j.value("kind", "") != "header") {
          throw FormatError("first line must be the header record");
        }
        m.split = j.at("split").get<std::string>();
        m.camera = j.at("camera").get<CameraConfig>();
        m.camera.norm_constant = j.at("norm_constant").get<double>();
        validate(m.camera);
        have_header = true;
      } else {
        m.records.push_back(parse_record(j));
      }
    } catch (const json::exception& e) {
      throw FormatError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    } catch (const ConfigError& e) {
      throw FormatError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    } catch (const FormatError& e) {
      throw FormatError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    }
  }
  if (!have_header) {
    throw FormatError("manifest " + path.string() + " has no header");
  }
  return m;
}

fs::path record_volume_path(const DatasetManifest& m, const ManifestRecord& r) { return m.base_dir / r.volume_path; }
fs::path record_image_path(const DatasetManifest& m, const ManifestRecord& r) { return m.base_dir / r.image_path; }

void check_manifest_integrity(const DatasetManifest& m)
{
  std::map<fs::path, std::array<int, 3>> volumes;
  for (const auto& r : m.records) {
    const fs::path vp = record_volume_path(m, r);
    if (!volumes.count(vp)) {
      if (!fs::exists(vp)) {
        throw IoError("manifest references missing volume " + vp.string());
      }
      volumes[vp] = load_volume(vp).dims;
    }
    const fs::path ip = record_image_path(m, r);
    if (!fs::exists(ip)) {
      throw IoError("manifest references missing image " + ip.string());
    }
    const Image2D img = load_image(ip);
    if (img.dims != m.camera.detector_px) {
      throw FormatError(fmt::format("image {} is {}x{}, camera expects {}x{}", ip.string(), img.dims[0], img.dims[1],
                                    m.camera.detector_px[0], m.camera.detector_px[1]));
    }
  }
}

std::uint64_t stream_seed(std::uint64_t seed, Stream s) { return mix_seed(seed, static_cast<std::uint64_t>(s)); }

PhantomSpec phantom_spec(const RunConfig& cfg, bool test_split, int index)
{
  PhantomSpec spec = cfg.data.phantom;
  spec.seed = mix_seed(stream_seed(cfg.seed, test_split ? Stream::test_phantoms : Stream::train_phantoms),
                       static_cast<std::uint64_t>(index));
  if (phantom_is_marked(index, cfg.data.marked_fraction)) {
    spec.marker = cfg.data.marker;
  } else {
    spec.marker.reset();
  }
  return spec;
}

namespace {

struct SplitPlan {
  std::string name;
  bool test = false;
  int n_phantoms = 0;
  std::vector<Volume> volumes;
  std::vector<bool> marked;
};

}  // namespace

GeneratedData generate_dataset(const RunConfig& cfg, const fs::path& out_dir)
{
  validate(cfg);
  std::vector<SplitPlan> splits(2);
  splits[0].name = "train";
  splits[0].n_phantoms = cfg.data.n_train_phantoms;
  splits[1].name = "test";
  splits[1].test = true;
  splits[1].n_phantoms = cfg.data.n_test_phantoms;

  for (auto& s : splits) {
    for (int i = 0; i < s.n_phantoms; ++i) {
      const PhantomSpec spec = phantom_spec(cfg, s.test, i);
      s.volumes.push_back(make_phantom(spec));
      s.marked.push_back(spec.marker.has_value());
      save_volume(s.volumes.back(), out_dir / "volumes" / fmt::format("{}_{:03d}.vol", s.name, i));
    }
  }

  // The normalization constant comes from raw renders of the training phantoms only.
  CameraConfig raw = cfg.camera;
  raw.norm_constant = 1.0;
  PoseSamplerConfig calib = cfg.sampler;
  calib.seed = stream_seed(cfg.seed, Stream::calibration);
  std::vector<Image2D> calib_images;
  for (int c = 0; c < cfg.data.calibration_renders; ++c) {
    const Volume& v = splits[0].volumes[c % splits[0].volumes.size()];
    calib_images.push_back(render_drr(v, sample_pose(calib, c), raw));
  }
  CameraConfig cam = cfg.camera;
  cam.norm_constant = calibrate_norm_constant(calib_images);

  GeneratedData out;
  out.norm_constant = cam.norm_constant;
  for (auto& s : splits) {
    DatasetManifest m;
    m.camera = cam;
    m.split = s.name;
    m.base_dir = out_dir;
    PoseSamplerConfig sampler = cfg.sampler;
    sampler.seed = stream_seed(cfg.seed, s.test ? Stream::test_poses : Stream::train_poses);
    for (int i = 0; i < s.n_phantoms; ++i) {
      for (int p = 0; p < cfg.data.poses_per_phantom; ++p) {
        ManifestRecord r;
        r.seed = static_cast<std::uint64_t>(i) * cfg.data.poses_per_phantom + p;
        r.pose = sample_pose(sampler, r.seed);
        r.marked = s.marked[i];
        r.volume_path = fmt::format("volumes/{}_{:03d}.vol", s.name, i);
        r.image_path = fmt::format("images/{}_{:03d}_{:04d}.img", s.name, i, p);
        save_image(render_drr(s.volumes[i], r.pose, cam), out_dir / r.image_path);
        m.records.push_back(std::move(r));
      }
    }
    const fs::path mp = out_dir / (s.name + ".jsonl");
    save_manifest(m, mp);
    (s.test ? out.test_manifest : out.train_manifest) = mp;
  }
  return out;
}

TrainingSet load_training_set(const DatasetManifest& m, const CondNetConfig& cfg)
{
  TrainingSet set;
  std::map<std::string, int> index;
  for (const auto& r : m.records) {
    auto it = index.find(r.volume_path);
    if (it == index.end()) {
      set.volumes.push_back(prepare_volume(load_volume(record_volume_path(m, r)), cfg));
      it = index.emplace(r.volume_path, static_cast<int>(set.volumes.size()) - 1).first;
    }
    TrainingSample s;
    s.volume_index = it->second;
    s.image = load_image(record_image_path(m, r));
    if (s.image.dims != cfg.image_input_dims) {
      throw ParameterError(fmt::format("image {} is {}x{}, conditioning network expects {}x{}", r.image_path,
                                       s.image.dims[0], s.image.dims[1], cfg.image_input_dims[0],
                                       cfg.image_input_dims[1]));
    }
    s.target = pose_vector(r.pose);
    set.samples.push_back(std::move(s));
  }
  return set;
}

}  // namespace ambireg
