#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "ambireg/cinn.hpp"
#include "ambireg/dataset.hpp"
#include "ambireg/drr.hpp"
#include "ambireg/modes.hpp"
#include "ambireg/phantom.hpp"

namespace ambireg {

/// L1 distance between a DRR rendered at p and the ground-truth projection.
double reprojection_error(const Volume& volume, const Image2D& gt_image, const Pose& p, const CameraConfig& cam);

struct EvalOptions {
  double threshold = 2000.0;
  int n_samples = 4096;
  GmmOptions gmm;
  std::uint64_t seed = 0;
};

struct CaseResult {
  int case_id = 0;
  Pose true_pose;
  bool marked = false;
  ModeReport report;
  std::vector<double> mode_l1;  ///< one per report mode, same order
  double single_l1 = 0.0;
  int closer_mode = 0;          ///< index into the report modes
  double closer_l1 = 0.0;
  std::optional<double> second_l1;  ///< the other mode, multi-modal cases only
};

/// Mode detection plus reprojection errors on already drawn posterior samples.
CaseResult evaluate_samples(const Eigen::MatrixXd& samples, const Volume& volume, const Image2D& gt_image,
                            const Pose& true_pose, const CameraConfig& cam, const EvalOptions& opts);

/// Samples the posterior of one case and evaluates it.
CaseResult evaluate_case(RegistrationModel& model, const Volume& volume, const Image2D& gt_image,
                         const Pose& true_pose, const CameraConfig& cam, const EvalOptions& opts,
                         Eigen::MatrixXd* samples_out = nullptr);

struct SubsetSummary {
  std::string subset;  ///< all | symmetric | marked
  int n_total = 0;
  int n_multimodal = 0;
  // Means over the multi-modal cases of the subset; NaN when there are none.
  double mean_l1_modes = 0.0;
  double mean_l1_closer = 0.0;
  double mean_l1_second = 0.0;
  double mean_l1_single = 0.0;
};

struct EvalSummary {
  std::vector<SubsetSummary> subsets;
  const SubsetSummary& get(const std::string& name) const;
};

EvalSummary summarize(const std::vector<CaseResult>& cases);

/// Evaluates every manifest record (or the first max_cases). per_case receives
/// posterior samples of each case when non-null.
std::vector<CaseResult> evaluate_testset(RegistrationModel& model, const DatasetManifest& m,
                                         const EvalOptions& opts, int max_cases = 0,
                                         std::vector<Eigen::MatrixXd>* samples_out = nullptr,
                                         int keep_samples = 0);

void to_json(nlohmann::json& j, const CaseResult& c);
void from_json(const nlohmann::json& j, CaseResult& c);
void to_json(nlohmann::json& j, const SubsetSummary& s);
void to_json(nlohmann::json& j, const EvalSummary& s);

void write_cases_jsonl(const std::vector<CaseResult>& cases, const std::filesystem::path& path);
std::vector<CaseResult> read_cases_jsonl(const std::filesystem::path& path);
void write_summary_json(const EvalSummary& s, const std::filesystem::path& path);
/// Columns: subset,n,mean_L1_modes,mean_L1_closer,mean_L1_second,mean_L1_single.
void write_summary_csv(const EvalSummary& s, const std::filesystem::path& path);

/// Lao posterior histogram: 360 one-degree bins, bin b covering (-90 + b, -89 + b].
std::vector<int> lao_histogram(const Eigen::MatrixXd& samples);
void write_histogram_csv(const std::vector<int>& counts, const std::filesystem::path& path);
void write_histogram_svg(const std::vector<int>& counts, const Pose& true_pose, const std::filesystem::path& path);

}  // namespace ambireg
