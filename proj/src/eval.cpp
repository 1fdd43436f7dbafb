#include "contrack/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "json.hpp"

namespace contrack {

double percentile_sorted(const std::vector<double>& sorted, double pct) {
  if (sorted.empty()) return 0.0;
  const double rank = pct / 100.0 * (static_cast<double>(sorted.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double f = rank - static_cast<double>(lo);
  return sorted[lo] * (1.0 - f) + sorted[hi] * f;
}

std::vector<double> sequence_distances_mm(const std::vector<PredictionRecord>& pred,
                                          const SequenceRecord& gt,
                                          double spacing_mm) {
  if (pred.size() != gt.frames.size())
    throw TensorError("evaluate: prediction/ground-truth frame count mismatch (" +
                      std::to_string(pred.size()) + " vs " +
                      std::to_string(gt.frames.size()) + ")");
  std::vector<double> out;
  for (std::size_t t = 1; t < gt.frames.size(); ++t) {
    if (!gt.frames[t].tip_gt) continue;
    const Vec2& g = *gt.frames[t].tip_gt;
    const Vec2& p = pred[t].tip_final;
    out.push_back(std::hypot(p.u - g.u, p.v - g.v) * spacing_mm);
  }
  return out;
}

namespace {

MetricsReport::Row make_row(const std::string& name, std::vector<double> d) {
  MetricsReport::Row row;
  row.scenario = name;
  row.n_frames = static_cast<long>(d.size());
  if (d.empty()) return row;
  std::sort(d.begin(), d.end());
  row.median_mm = percentile_sorted(d, 50.0);
  double s = 0.0;
  for (double v : d) s += v;
  row.mean_mm = s / static_cast<double>(d.size());
  double var = 0.0;
  for (double v : d) var += (v - row.mean_mm) * (v - row.mean_mm);
  row.std_mm = std::sqrt(var / static_cast<double>(d.size()));
  return row;
}

}  // namespace

MetricsReport evaluate(const std::vector<std::vector<PredictionRecord>>& preds,
                       const std::vector<SequenceRecord>& gt,
                       const EvalConfig& cfg) {
  if (preds.size() != gt.size())
    throw TensorError("evaluate: sequence count mismatch");
  if (cfg.pixel_spacing_mm <= 0.0) throw TensorError("evaluate: spacing must be > 0");
  std::map<std::string, std::vector<double>> per_scenario;
  std::vector<double> all;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (cfg.scenario_filter != "all" && gt[i].scenario != cfg.scenario_filter) continue;
    auto d = sequence_distances_mm(preds[i], gt[i], cfg.pixel_spacing_mm);
    auto& bucket = per_scenario[gt[i].scenario];
    bucket.insert(bucket.end(), d.begin(), d.end());
    all.insert(all.end(), d.begin(), d.end());
  }
  MetricsReport rep;
  for (auto& [name, d] : per_scenario) rep.rows.push_back(make_row(name, d));
  rep.rows.push_back(make_row("All", all));
  std::sort(all.begin(), all.end());
  for (double p : cfg.percentiles)
    rep.percentile_table.emplace_back(p, percentile_sorted(all, p));
  return rep;
}

std::string MetricsReport::format_table() const {
  std::ostringstream os;
  os << "scenario      median    mean     std      n\n";
  os.setf(std::ios::fixed);
  os.precision(2);
  for (const auto& r : rows) {
    os.width(12);
    os << std::left << r.scenario << std::right << "  ";
    os.width(6);
    os << r.median_mm << "  ";
    os.width(6);
    os << r.mean_mm << "  ";
    os.width(6);
    os << r.std_mm << "  ";
    os.width(5);
    os << r.n_frames << "\n";
  }
  return os.str();
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  for (const auto& r : rows)
    j["rows"].push_back({{"scenario", r.scenario},
                         {"median_mm", r.median_mm},
                         {"mean_mm", r.mean_mm},
                         {"std_mm", r.std_mm},
                         {"n_frames", r.n_frames}});
  for (const auto& [p, v] : percentile_table)
    j["percentiles"].push_back({{"pct", p}, {"mm", v}});
  return j.dump(2);
}

}  // namespace contrack
