#include "ambireg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include <fmt/format.h>

#include "ambireg/error.hpp"
#include "ambireg/rng.hpp"

namespace ambireg {

using nlohmann::json;
namespace fs = std::filesystem;

double reprojection_error(const Volume& volume, const Image2D& gt_image, const Pose& p, const CameraConfig& cam)
{
  return l1_image_distance(render_drr(volume, p, cam), gt_image);
}

CaseResult evaluate_samples(const Eigen::MatrixXd& samples, const Volume& volume, const Image2D& gt_image,
                            const Pose& true_pose, const CameraConfig& cam, const EvalOptions& opts)
{
  CaseResult c;
  c.true_pose = true_pose;
  c.report = detect_modes(samples, opts.threshold, opts.seed, opts.gmm);
  for (const auto& p : c.report.mode_poses) {
    c.mode_l1.push_back(reprojection_error(volume, gt_image, p, cam));
  }
  c.single_l1 = reprojection_error(volume, gt_image, c.report.single_pose, cam);

  PoseVector truth = pose_vector(true_pose);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < c.report.mode_vectors.size(); ++m) {
    const double d = (c.report.mode_vectors[m] - truth).norm();
    if (d < best) {
      best = d;
      c.closer_mode = static_cast<int>(m);
    }
  }
  c.closer_l1 = c.mode_l1[c.closer_mode];
  if (c.mode_l1.size() == 2) {
    c.second_l1 = c.mode_l1[1 - c.closer_mode];
  }
  return c;
}

CaseResult evaluate_case(RegistrationModel& model, const Volume& volume, const Image2D& gt_image,
                         const Pose& true_pose, const CameraConfig& cam, const EvalOptions& opts,
                         Eigen::MatrixXd* samples_out)
{
  const Eigen::MatrixXd samples = sample_posterior(model, volume, gt_image, opts.n_samples, opts.seed);
  CaseResult c = evaluate_samples(samples, volume, gt_image, true_pose, cam, opts);
  if (samples_out) {
    *samples_out = samples;
  }
  return c;
}

const SubsetSummary& EvalSummary::get(const std::string& name) const
{
  for (const auto& s : subsets) {
    if (s.subset == name) {
      return s;
    }
  }
  throw ParameterError("no evaluation subset named " + name);
}

namespace {

SubsetSummary summarize_subset(const std::string& name, const std::vector<const CaseResult*>& cases)
{
  SubsetSummary s;
  s.subset = name;
  s.n_total = static_cast<int>(cases.size());
  double modes = 0.0;
  int n_modes = 0;
  double closer = 0.0;
  double second = 0.0;
  double single = 0.0;
  for (const auto* c : cases) {
    if (!c->report.multimodal) {
      continue;
    }
    ++s.n_multimodal;
    for (double v : c->mode_l1) {
      modes += v;
      ++n_modes;
    }
    closer += c->closer_l1;
    second += c->second_l1.value_or(0.0);
    single += c->single_l1;
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double n = s.n_multimodal;
  s.mean_l1_modes = n_modes ? modes / n_modes : nan;
  s.mean_l1_closer = n ? closer / n : nan;
  s.mean_l1_second = n ? second / n : nan;
  s.mean_l1_single = n ? single / n : nan;
  return s;
}

}  // namespace

EvalSummary summarize(const std::vector<CaseResult>& cases)
{
  std::vector<const CaseResult*> all;
  std::vector<const CaseResult*> sym;
  std::vector<const CaseResult*> marked;
  for (const auto& c : cases) {
    all.push_back(&c);
    (c.marked ? marked : sym).push_back(&c);
  }
  EvalSummary s;
  s.subsets = {summarize_subset("all", all), summarize_subset("symmetric", sym), summarize_subset("marked", marked)};
  return s;
}

std::vector<CaseResult> evaluate_testset(RegistrationModel& model, const DatasetManifest& m, const EvalOptions& opts,
                                         int max_cases, std::vector<Eigen::MatrixXd>* samples_out, int keep_samples)
{
  if (m.records.empty()) {
    throw ParameterError("evaluation manifest is empty");
  }
  const std::size_t n = max_cases > 0 ? std::min<std::size_t>(max_cases, m.records.size()) : m.records.size();
  std::map<std::string, Volume> volumes;
  std::vector<CaseResult> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = m.records[i];
    auto it = volumes.find(r.volume_path);
    if (it == volumes.end()) {
      it = volumes.emplace(r.volume_path, load_volume(record_volume_path(m, r))).first;
    }
    const Image2D gt = load_image(record_image_path(m, r));
    EvalOptions o = opts;
    o.seed = mix_seed(opts.seed, i);
    Eigen::MatrixXd samples;
    CaseResult c = evaluate_case(model, it->second, gt, r.pose, m.camera, o, &samples);
    c.case_id = static_cast<int>(i);
    c.marked = r.marked;
    if (samples_out && static_cast<int>(i) < keep_samples) {
      samples_out->push_back(std::move(samples));
    }
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

void to_json(json& j, const CaseResult& c)
{
  j = json{{"case_id", c.case_id},
           {"true_pose", c.true_pose},
           {"phantom", c.marked ? "marked" : "symmetric"},
           {"report", c.report},
           {"mode_l1", c.mode_l1},
           {"single_l1", c.single_l1},
           {"closer_mode", c.closer_mode},
           {"closer_l1", c.closer_l1},
           {"second_l1", c.second_l1 ? json(*c.second_l1) : json(nullptr)}};
}

void from_json(const json& j, CaseResult& c)
{
  c.case_id = j.at("case_id").get<int>();
  c.true_pose = j.at("true_pose").get<Pose>();
  c.marked = j.at("phantom").get<std::string>() == "marked";
  c.report = j.at("report").get<ModeReport>();
  c.mode_l1 = j.at("mode_l1").get<std::vector<double>>();
  c.single_l1 = j.at("single_l1").get<double>();
  c.closer_mode = j.at("closer_mode").get<int>();
  c.closer_l1 = j.at("closer_l1").get<double>();
  if (j.at("second_l1").is_null()) {
    c.second_l1.reset();
  } else {
    c.second_l1 = j.at("second_l1").get<double>();
  }
}

void to_json(json& j, const SubsetSummary& s)
{
  j = json{{"subset", s.subset},
           {"n_total", s.n_total},
           {"n_multimodal", s.n_multimodal},
           {"mean_l1_modes", nullable(s.mean_l1_modes)},
           {"mean_l1_closer", nullable(s.mean_l1_closer)},
           {"mean_l1_second", nullable(s.mean_l1_second)},
           {"mean_l1_single", nullable(s.mean_l1_single)}};
}

void to_json(json& j, const EvalSummary& s) { j = json{{"subsets", s.subsets}}; }

namespace {

std::ofstream open_out(const fs::path& path)
{
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  return out;
}

std::string csv_number(double v) { return std::isfinite(v) ? fmt::format("{:.9g}", v) : std::string(); }

}  // namespace

void write_cases_jsonl(const std::vector<CaseResult>& cases, const fs::path& path)
{
  auto out = open_out(path);
  for (const auto& c : cases) {
    out << json(c).dump() << '\n';
  }
}

std::vector<CaseResult> read_cases_jsonl(const fs::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  std::vector<CaseResult> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    try {
      out.push_back(json::parse(line).get<CaseResult>());
    } catch (const json::exception& e) {
      throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
    }
  }
  return out;
}

void write_summary_json(const EvalSummary& s, const fs::path& path)
{
  auto out = open_out(path);
  out << json(s).dump(2) << '\n';
}

void write_summary_csv(const EvalSummary& s, const fs::path& path)
{
  auto out = open_out(path);
  out << "subset,n,mean_L1_modes,mean_L1_closer,mean_L1_second,mean_L1_single\n";
  for (const auto& r : s.subsets) {
    out << fmt::format("{},{},{},{},{},{}\n", r.subset, r.n_total, csv_number(r.mean_l1_modes),
                       csv_number(r.mean_l1_closer), csv_number(r.mean_l1_second), csv_number(r.mean_l1_single));
  }
}

std::vector<int> lao_histogram(const Eigen::MatrixXd& samples)
{
  std::vector<int> counts(360, 0);
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    const double lao = canonicalize_lao(samples(i, 3) * kLaoScale + kLaoOffset);
    // (-90 + b, -89 + b] -> b; lao == -89 exactly falls in bin 0.
    int b = static_cast<int>(std::ceil(lao + 90.0)) - 1;
    b = std::clamp(b, 0, 359);
    ++counts[b];
  }
  return counts;
}

void write_histogram_csv(const std::vector<int>& counts, const fs::path& path)
{
  auto out = open_out(path);
  out << "lao_low_deg,lao_high_deg,count\n";
  for (std::size_t b = 0; b < counts.size(); ++b) {
    const int lo = -90 + static_cast<int>(b);
    out << fmt::format("{},{},{}\n", lo, lo + 1, counts[b]);
  }
}

void write_histogram_svg(const std::vector<int>& counts, const Pose& true_pose, const fs::path& path)
{
  constexpr int kW = 720;
  constexpr int kH = 200;
  constexpr int kPad = 20;
  const int peak = std::max(1, *std::max_element(counts.begin(), counts.end()));
  const double bw = static_cast<double>(kW) / counts.size();
  auto out = open_out(path);
  out << fmt::format(R"(<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}">)", kW, kH + 2 * kPad) << '\n';
  out << fmt::format(R"(<rect x="0" y="0" width="{}" height="{}" fill="white"/>)", kW, kH + 2 * kPad) << '\n';
  for (std::size_t b = 0; b < counts.size(); ++b) {
    if (counts[b] == 0) {
      continue;
    }
    const double h = static_cast<double>(counts[b]) / peak * kH;
    out << fmt::format(R"(<rect x="{:.2f}" y="{:.2f}" width="{:.2f}" height="{:.2f}" fill="steelblue"/>)", b * bw,
                       kPad + kH - h, bw, h)
        << '\n';
  }
  for (double lao : {true_pose.lao, canonicalize_lao(true_pose.lao + 180.0)}) {
    const double x = (lao + 90.0) * bw;
    out << fmt::format(R"(<line x1="{0:.2f}" y1="{1}" x2="{0:.2f}" y2="{2}" stroke="red" stroke-dasharray="4,3"/>)",
                       x, kPad, kPad + kH)
        << '\n';
  }
  for (int tick = -90; tick <= 270; tick += 45) {
    out << fmt::format(R"(<text x="{:.2f}" y="{}" font-size="10" text-anchor="middle">{}</text>)",
                       (tick + 90.0) * bw, kH + 2 * kPad - 4, tick)
        << '\n';
  }
  out << "</svg>\n";
}

}  // namespace ambireg
