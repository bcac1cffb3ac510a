#include "fovea/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

namespace fovea {

using json = nlohmann::ordered_json;

double mean_iou(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw std::invalid_argument("mean_iou: no records");
  double sum = 0.0;
  for (const auto& r : records) sum += iou(r.pred, r.gt);
  return sum / static_cast<double>(records.size());
}

double classification_error_rate(const std::vector<EvalRecord>& records) {
  if (records.empty())
    throw std::invalid_argument("classification_error_rate: no records");
  std::size_t wrong = 0;
  for (const auto& r : records) {
    if (!r.label.has_value())
      throw std::invalid_argument("classification_error_rate: record " + r.id +
                                  " has no label");
    wrong += r.pred_class != *r.label;
  }
  return static_cast<double>(wrong) / static_cast<double>(records.size());
}

double mean_average_precision(const std::vector<EvalRecord>& records,
                              double iou_threshold,
                              std::map<int, double>* per_class_ap) {
  if (records.empty())
    throw std::invalid_argument("mean_average_precision: no records");

  std::set<int> classes;
  std::map<int, int> npos;
  for (const auto& r : records) {
    if (!r.label.has_value())
      throw std::invalid_argument("mean_average_precision: record " + r.id +
                                  " has no label");
    classes.insert(*r.label);
    ++npos[*r.label];
  }
  if (classes.empty())
    throw std::invalid_argument("mean_average_precision: empty class set");

  std::map<int, double> ap;
  for (int cls : classes) {
    // this class's predictions, ranked by score (id breaks ties)
    std::vector<const EvalRecord*> preds;
    for (const auto& r : records)
      if (r.pred_class == cls) preds.push_back(&r);
    std::sort(preds.begin(), preds.end(),
              [](const EvalRecord* a, const EvalRecord* b) {
                if (a->score != b->score) return a->score > b->score;
                return a->id < b->id;
              });

    std::vector<double> precision, recall;
    int tp = 0, fp = 0;
    for (const EvalRecord* r : preds) {
      const bool hit = *r->label == cls && iou(r->pred, r->gt) >= iou_threshold;
      hit ? ++tp : ++fp;
      precision.push_back(static_cast<double>(tp) / (tp + fp));
      recall.push_back(static_cast<double>(tp) / npos[cls]);
    }

    // all-points interpolation: area under the precision envelope
    double area = 0.0, prev_recall = 0.0, run_max = 0.0;
    std::vector<double> envelope(precision.size());
    for (std::size_t i = precision.size(); i-- > 0;) {
      run_max = std::max(run_max, precision[i]);
      envelope[i] = run_max;
    }
    for (std::size_t i = 0; i < precision.size(); ++i) {
      area += (recall[i] - prev_recall) * envelope[i];
      prev_recall = recall[i];
    }
    ap[cls] = area;
  }

  double sum = 0.0;
  for (const auto& [cls, v] : ap) sum += v;
  if (per_class_ap) *per_class_ap = ap;
  return sum / static_cast<double>(ap.size());
}

MetricsReport compute_report(const std::vector<EvalRecord>& records,
                             const std::string& config_digest,
                             double iou_threshold) {
  MetricsReport rep;
  rep.mean_iou = mean_iou(records);
  rep.n_records = static_cast<int>(records.size());
  rep.config_digest = config_digest;
  const bool labeled = std::all_of(records.begin(), records.end(),
                                   [](const EvalRecord& r) {
                                     return r.label.has_value();
                                   });
  if (labeled && records.front().pred_class >= 0) {
    rep.error_rate = classification_error_rate(records);
    rep.map = mean_average_precision(records, iou_threshold, &rep.per_class_ap);
  }
  return rep;
}

void write_report(const MetricsReport& report,
                  const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json j;
  j["mean_iou"] = report.mean_iou;
  j["error_rate"] =
      report.error_rate ? json(*report.error_rate) : json(nullptr);
  j["map"] = report.map ? json(*report.map) : json(nullptr);
  json pca = json::object();
  for (const auto& [cls, ap] : report.per_class_ap)
    pca[std::to_string(cls)] = ap;
  j["per_class_ap"] = pca;
  j["n_records"] = report.n_records;
  j["config_digest"] = report.config_digest;

  std::ofstream jf(dir / "report.json");
  if (!jf) throw std::runtime_error("write_report: cannot write report.json");
  jf << j.dump(2) << "\n";

  std::ofstream tf(dir / "report.txt");
  if (!tf) throw std::runtime_error("write_report: cannot write report.txt");
  tf << "mean_iou = " << report.mean_iou << "\n";
  if (report.error_rate) tf << "error_rate = " << *report.error_rate << "\n";
  if (report.map) tf << "map = " << *report.map << "\n";
  tf << "n_records = " << report.n_records << "\n";
  tf << "config_digest = " << report.config_digest << "\n";
}

MetricsReport load_report(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in)
    throw std::runtime_error("load_report: cannot open " + json_path.string());
  json j = json::parse(in);
  MetricsReport rep;
  rep.mean_iou = j.at("mean_iou").get<double>();
  if (!j.at("error_rate").is_null())
    rep.error_rate = j.at("error_rate").get<double>();
  if (!j.at("map").is_null()) rep.map = j.at("map").get<double>();
  for (const auto& [k, v] : j.at("per_class_ap").items())
    rep.per_class_ap[std::stoi(k)] = v.get<double>();
  rep.n_records = j.at("n_records").get<int>();
  rep.config_digest = j.at("config_digest").get<std::string>();
  return rep;
}

}  // namespace fovea
