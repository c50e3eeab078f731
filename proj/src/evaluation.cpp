#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "json.hpp"
#include "rosd/errors.hpp"
#include "rosd/evaluation.hpp"

namespace rosd {
namespace {

const std::vector<Box>& predictions_for(const std::map<std::string, std::vector<Box>>& predictions,
                                        const std::string& image_id) {
  static const std::vector<Box> none;
  auto it = predictions.find(image_id);
  return it == predictions.end() ? none : it->second;
}

std::string image_class(const ImageTruth& t) {
  if (!t.class_label.empty()) return t.class_label;
  if (!t.boxes.empty() && !t.boxes.front().label.empty()) return t.boxes.front().label;
  return "all";
}

struct Tally {
  std::size_t hits = 0;
  std::size_t total = 0;
};

EvalReport finish(MetricKind metric, double threshold, const std::map<std::string, Tally>& per_class,
                  EvalSetting setting) {
  EvalReport report;
  report.metric = metric;
  report.iou_threshold = threshold;
  std::size_t hits = 0;
  double class_sum = 0.0;
  for (const auto& [label, tally] : per_class) {
    const double pct = tally.total ? 100.0 * static_cast<double>(tally.hits) / static_cast<double>(tally.total) : 0.0;
    report.per_class[label] = pct;
    class_sum += pct;
    hits += tally.hits;
    report.evaluated += tally.total;
  }
  if (setting == EvalSetting::Colocalization) {
    report.overall = per_class.empty() ? 0.0 : class_sum / static_cast<double>(per_class.size());
  } else {
    report.overall =
        report.evaluated ? 100.0 * static_cast<double>(hits) / static_cast<double>(report.evaluated) : 0.0;
  }
  return report;
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

struct ColumnSummary {
  std::string label;
  SeedSummary summary;
};

std::vector<ColumnSummary> summarize_runs(std::span<const EvalReport> runs) {
  std::set<std::string> labels;
  for (const auto& r : runs) {
    for (const auto& [label, v] : r.per_class) labels.insert(label);
  }
  std::vector<ColumnSummary> rows;
  for (const auto& label : labels) {
    std::vector<double> values;
    for (const auto& r : runs) {
      if (auto it = r.per_class.find(label); it != r.per_class.end()) values.push_back(it->second);
    }
    rows.push_back({label, summarize(values)});
  }
  std::vector<double> overall;
  for (const auto& r : runs) overall.push_back(r.overall);
  rows.push_back({"overall", summarize(overall)});
  return rows;
}

}  // namespace

EvalReport corloc(const std::map<std::string, std::vector<Box>>& predictions, std::span<const ImageTruth> truth,
                  double iou_threshold, EvalSetting setting) {
  std::map<std::string, Tally> per_class;
  for (const auto& image : truth) {
    if (image.boxes.empty()) throw Error(ErrorCode::MissingGroundTruth, "image " + image.image_id + " has no boxes");
    const auto& preds = predictions_for(predictions, image.image_id);
    bool hit = false;
    for (const auto& p : preds) {
      for (const auto& gt : image.boxes) hit = hit || iou(p, gt.box) > iou_threshold;
    }
    Tally& t = per_class[image_class(image)];
    ++t.total;
    t.hits += hit ? 1 : 0;
  }
  return finish(MetricKind::CorLoc, iou_threshold, per_class, setting);
}

EvalReport detection_rate(const std::map<std::string, std::vector<Box>>& predictions,
                          std::span<const ImageTruth> truth, double zeta, EvalSetting setting) {
  std::map<std::string, Tally> per_class;
  for (const auto& image : truth) {
    if (image.boxes.empty()) throw Error(ErrorCode::MissingGroundTruth, "image " + image.image_id + " has no boxes");
    const auto& preds = predictions_for(predictions, image.image_id);
    for (const auto& gt : image.boxes) {
      const bool hit = std::any_of(preds.begin(), preds.end(), [&](const Box& p) { return iou(p, gt.box) > zeta; });
      Tally& t = per_class[gt.label.empty() ? image_class(image) : gt.label];
      ++t.total;
      t.hits += hit ? 1 : 0;
    }
  }
  return finish(MetricKind::DetectionRate, zeta, per_class, setting);
}

EvalReport corret(const std::map<std::string, std::vector<std::string>>& out_edges,
                  const std::map<std::string, std::string>& class_labels) {
  auto label_of = [&](const std::string& id) -> const std::string& {
    auto it = class_labels.find(id);
    if (it == class_labels.end() || it->second.empty()) {
      throw Error(ErrorCode::UnlabeledImage, "image " + id + " has no class label");
    }
    return it->second;
  };

  EvalReport report;
  report.metric = MetricKind::CorRet;
  report.iou_threshold = 0.0;
  std::map<std::string, std::pair<double, std::size_t>> per_class;
  double sum = 0.0;
  for (const auto& [id, neighbours] : out_edges) {
    const std::string& label = label_of(id);
    if (neighbours.empty()) continue;
    std::size_t same = 0;
    for (const auto& j : neighbours) same += label_of(j) == label ? 1 : 0;
    const double pct = 100.0 * static_cast<double>(same) / static_cast<double>(neighbours.size());
    sum += pct;
    ++report.evaluated;
    per_class[label].first += pct;
    ++per_class[label].second;
  }
  for (const auto& [label, acc] : per_class) report.per_class[label] = acc.first / static_cast<double>(acc.second);
  report.overall = report.evaluated ? sum / static_cast<double>(report.evaluated) : 0.0;
  return report;
}

SeedSummary summarize(std::span<const double> values) {
  SeedSummary s;
  s.count = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return s;
}

std::string metric_name(MetricKind metric) {
  switch (metric) {
    case MetricKind::CorLoc: return "corloc";
    case MetricKind::DetectionRate: return "detection_rate";
    case MetricKind::CorRet: return "corret";
  }
  return "unknown";
}

std::string report_to_json(std::span<const EvalReport> runs) {
  using nlohmann::json;
  json doc;
  if (!runs.empty()) {
    doc["metric"] = metric_name(runs.front().metric);
    if (runs.front().metric != MetricKind::CorRet) doc["iou_threshold"] = runs.front().iou_threshold;
  }
  json run_list = json::array();
  for (const auto& r : runs) {
    run_list.push_back({{"overall", r.overall}, {"per_class", r.per_class}, {"evaluated", r.evaluated}});
  }
  doc["runs"] = std::move(run_list);
  json summary = json::object();
  for (const auto& row : summarize_runs(runs)) {
    summary[row.label] = {{"mean", row.summary.mean}, {"std", row.summary.stddev}, {"count", row.summary.count}};
  }
  doc["summary"] = std::move(summary);
  return doc.dump(2) + "\n";
}

std::string report_to_table(std::span<const EvalReport> runs) {
  const auto rows = summarize_runs(runs);
  std::size_t width = 5;
  for (const auto& row : rows) width = std::max(width, row.label.size());
  std::string title = runs.empty() ? "metric" : metric_name(runs.front().metric);
  std::string out;
  auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(w, s.size()), ' ');
    return s;
  };
  out += pad("class", width) + "  " + title + " (mean +- std over " + std::to_string(runs.size()) + " run(s))\n";
  out += std::string(width, '-') + "  " + std::string(title.size() + 30, '-') + "\n";
  for (const auto& row : rows) {
    out += pad(row.label, width) + "  " + fmt("%6.2f", row.summary.mean) + " +- " + fmt("%.2f", row.summary.stddev) +
           "\n";
  }
  return out;
}

std::string report_to_csv(std::span<const EvalReport> runs) {
  std::string out = "metric,run,class,value\n";
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const std::string name = metric_name(runs[r].metric);
    for (const auto& [label, v] : runs[r].per_class) {
      out += name + "," + std::to_string(r) + "," + label + "," + fmt("%.4f", v) + "\n";
    }
    out += name + "," + std::to_string(r) + ",overall," + fmt("%.4f", runs[r].overall) + "\n";
  }
  return out;
}

std::vector<ImageTruth> truth_from_manifest(const DatasetManifest& manifest) {
  std::vector<ImageTruth> truth;
  for (const auto& image : manifest.images) {
    if (!image.ground_truth || image.ground_truth->empty()) continue;
    truth.push_back({image.image_id, image.class_label.value_or(""), *image.ground_truth});
  }
  return truth;
}

}  // namespace rosd
