#pragma once

#include <string>
#include <vector>

#include "contrack/tracker.hpp"

namespace contrack {

struct EvalConfig {
  double pixel_spacing_mm = 0.308;
  std::vector<double> percentiles = {10, 25, 50, 75, 90, 95};
  std::string scenario_filter = "all";  // "fluoro" | "angio" | "devices" | "all"
};

struct MetricsReport {
  struct Row {
    std::string scenario;
    double median_mm = 0.0;
    double mean_mm = 0.0;
    double std_mm = 0.0;
    long n_frames = 0;
  };
  std::vector<Row> rows;  // per scenario, then "All"
  std::vector<std::pair<double, double>> percentile_table;  // (pct, mm)

  const Row& all() const { return rows.back(); }
  std::string format_table() const;  // median / mean / std layout
  std::string to_json() const;
};

double percentile_sorted(const std::vector<double>& sorted, double pct);

// Per-frame Euclidean distance in mm against annotated frames (frame 0, the
// initialization frame, is excluded).
MetricsReport evaluate(const std::vector<std::vector<PredictionRecord>>& preds,
                       const std::vector<SequenceRecord>& gt,
                       const EvalConfig& cfg);

// Distances (mm) for a single tracked sequence.
std::vector<double> sequence_distances_mm(const std::vector<PredictionRecord>& pred,
                                          const SequenceRecord& gt,
                                          double spacing_mm);

}  // namespace contrack
