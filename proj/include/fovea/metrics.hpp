#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fovea/geometry.hpp"

namespace fovea {

struct EvalRecord {
  std::string id;
  BoundingBox pred;
  double score = 0.0;        // ranking score in [0, 1]
  int pred_class = -1;       // argmax of the class distribution, -1 if none
  BoundingBox gt;
  std::optional<int> label;
};

double mean_iou(const std::vector<EvalRecord>& records);

double classification_error_rate(const std::vector<EvalRecord>& records);

// One prediction per image: a true positive needs IoU >= threshold against
// its own image's ground truth and a matching class. AP uses the all-points
// precision envelope; the mean runs over classes present in the ground truth.
double mean_average_precision(const std::vector<EvalRecord>& records,
                              double iou_threshold = 0.5,
                              std::map<int, double>* per_class_ap = nullptr);

struct MetricsReport {
  double mean_iou = 0.0;
  std::optional<double> error_rate;
  std::optional<double> map;
  std::map<int, double> per_class_ap;
  int n_records = 0;
  std::string config_digest;
};

MetricsReport compute_report(const std::vector<EvalRecord>& records,
                             const std::string& config_digest,
                             double iou_threshold = 0.5);

// report.json plus a flat key-value report.txt.
void write_report(const MetricsReport& report, const std::filesystem::path& dir);
MetricsReport load_report(const std::filesystem::path& json_path);

}  // namespace fovea
