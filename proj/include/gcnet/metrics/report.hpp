// Metric reports: flat key = value text, JSON, and the PR curve as CSV.
#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gcnet/metrics/clear_mot.hpp"
#include "gcnet/metrics/detection_ap.hpp"

namespace gcnet {

struct metrics_report {
  std::vector<std::pair<std::string, double>> values;  // in insertion order

  void set(const std::string& key, double v) {
    for (auto& [k, x] : values)
      if (k == key) {
        x = v;
        return;
      }
    values.emplace_back(key, v);
  }

  double get(const std::string& key) const {
    for (const auto& [k, x] : values)
      if (k == key) return x;
    throw std::out_of_range("metrics report has no key '" + key + "'");
  }

  bool has(const std::string& key) const {
    for (const auto& kv : values)
      if (kv.first == key) return true;
    return false;
  }
};

inline void add_detection(metrics_report& r, const ap_result& ap, double iou_thr) {
  r.set("ap", ap.ap);
  r.set("ap_iou_threshold", iou_thr);
  r.set("det_true_positives", double(ap.true_positives));
  r.set("det_false_positives", double(ap.false_positives));
  r.set("det_ground_truth", double(ap.ground_truth));
}

inline void add_tracking(metrics_report& r, const mot_counts& c, double iou_thr) {
  r.set("mota", c.mota());
  r.set("motp", c.motp());
  r.set("mt", c.mt());
  r.set("ml", c.ml());
  r.set("ids", double(c.ids));
  r.set("fm", double(c.fm));
  r.set("fp", double(c.fp));
  r.set("fn", double(c.fn));
  r.set("gt_boxes", double(c.gt_boxes));
  r.set("gt_tracks", double(c.gt_tracks));
  r.set("sequences", double(c.sequences));
  r.set("ids_per_sequence", c.ids_per_sequence());
  r.set("full_tracks", double(c.full_tracks));
  r.set("full_track_id_coverage_mean", c.full_coverage_mean());
  r.set("full_track_id_coverage_min", c.full_tracks ? c.full_coverage_min : 1.0);
  r.set("mot_iou_threshold", iou_thr);
}

inline std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline void write_report_kv(std::ostream& os, const metrics_report& r) {
  for (const auto& [k, v] : r.values) os << k << " = " << format_value(v) << '\n';
}

inline metrics_report read_report_kv(std::istream& is) {
  metrics_report r;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw std::runtime_error("metrics report line " + std::to_string(n) + ": expected 'key = value'");
    try {
      r.set(line.substr(0, eq), std::stod(line.substr(eq + 3)));
    } catch (const std::logic_error&) {
      throw std::runtime_error("metrics report line " + std::to_string(n) + ": bad number");
    }
  }
  return r;
}

inline void write_report_json(std::ostream& os, const metrics_report& r) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.values) j[k] = std::stod(format_value(v));
  os << j.dump(2) << '\n';
}

inline void write_pr_csv(std::ostream& os, const std::vector<pr_point>& curve) {
  os << "recall,precision,score\n";
  for (const auto& p : curve) os << format_value(p.recall) << ',' << format_value(p.precision) << ',' << format_value(p.score) << '\n';
}

}  // namespace gcnet
