#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "occseg/grid.hpp"
#include "occseg/sbm.hpp"
#include "occseg/scene_init.hpp"
#include "occseg/solver.hpp"
#include "occseg/synth.hpp"

namespace occseg {

/// 1 where q > t (strict).
BinaryMask threshold_region(const MembershipField& q, double t);

/// Mean of foreground and background recall, in percent. When gt has only
/// one class the recall of that class is returned. With plain = true the
/// ordinary fraction of correctly labelled pixels is returned instead.
double average_pixel_accuracy(const BinaryMask& pred, const BinaryMask& gt, bool plain = false);

/// 100 |pred & gt| / |pred | gt|; 100 when both are empty.
double iou(const BinaryMask& pred, const BinaryMask& gt);

enum class Method { nosp, single, multi };

std::string method_name(Method m);
Method parse_method(const std::string& name);

/// Scene initialisation followed by one of the three segmentation methods.
/// With known intensities the k-means step is skipped; otherwise k is the
/// number of objects plus one.
SegmentationResult segment_image(const Image& u, Method method, int n_objects,
                                 const SbmParams* params, const SbmArchitecture* arch,
                                 const SolverConfig& solver, const InitConfig& init,
                                 const std::optional<std::vector<double>>& intensities = std::nullopt,
                                 const std::optional<std::vector<BinaryMask>>& seeds = std::nullopt);

struct RegionScore {
  int region = 0;
  double ap = 0.0;
  double iou = 0.0;
};

struct InstanceResult {
  int instance = 0;
  Method method = Method::nosp;
  std::uint64_t scene_seed = 0;
  std::vector<RegionScore> scores;
  double runtime_s = 0.0;
  int outer_iterations = 0;
  bool converged = false;
  bool failed = false;
  std::string error;
};

struct SummaryRow {
  Method method = Method::nosp;
  int region = 0;
  double ap_mean = 0.0, ap_std = 0.0;
  double iou_mean = 0.0, iou_std = 0.0;
  double runtime_mean_s = 0.0, runtime_std_s = 0.0;
  int n_instances = 0;
};

struct ExperimentConfig {
  std::vector<Method> methods = {Method::nosp, Method::single, Method::multi};
  int n_objects = 2;
  int count = 50;
  int canvas_w = 0;  // 0: twice the shape width
  int canvas_h = 0;
  double sigma = 0.05;
  std::uint64_t seed = 0;
  /// Hand the true intensities to the segmenter instead of running k-means.
  bool known_intensities = false;
  bool plain_accuracy = false;
  int jobs = 1;
  SolverConfig solver;
  InitConfig init;

  void validate() const;
};

struct ExperimentReport {
  std::vector<SummaryRow> rows;
  std::vector<InstanceResult> instances;
  /// Failed instances per method, in the order of ExperimentConfig::methods.
  std::vector<int> failures;
};

/// Seed of scene `instance` derived from the experiment seed.
std::uint64_t scene_seed(std::uint64_t experiment_seed, int instance);

ExperimentReport run_experiment(const ShapeDataset& ds, const SbmParams* params,
                                const SbmArchitecture* arch, const ExperimentConfig& cfg);

/// Summary table: method,region,ap_mean,ap_std,iou_mean,iou_std,
/// runtime_mean_s,runtime_std_s,n_instances
void write_summary_csv(std::ostream& out, const ExperimentReport& report);
void write_instances_csv(std::ostream& out, const ExperimentReport& report);
nlohmann::json experiment_metadata(const ExperimentConfig& cfg, const ExperimentReport& report);

nlohmann::json to_json(const SolverConfig& c);
nlohmann::json to_json(const InitConfig& c);

}  // namespace occseg
