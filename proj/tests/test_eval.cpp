#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "contrack/eval.hpp"

using namespace contrack;

namespace {

// Ground truth with annotated tips at fixed positions, plus predictions
// displaced by per-frame offsets (frame 0 is the initialization frame).
struct Fixture {
  SequenceRecord gt;
  std::vector<PredictionRecord> pred;
};

Fixture make_fixture(const std::vector<Vec2>& offsets, const std::string& scenario) {
  Fixture fx;
  fx.gt.scenario = scenario;
  fx.gt.pixel_spacing_mm = 0.308;
  const int n = static_cast<int>(offsets.size()) + 1;
  for (int t = 0; t < n; ++t) {
    Frame f;
    f.image = Image(32, 32, 0.5);
    f.tip_gt = Vec2{10.0, 12.0};
    fx.gt.frames.push_back(std::move(f));
    PredictionRecord r;
    r.frame_index = t;
    Vec2 off = t == 0 ? Vec2{0.0, 0.0} : offsets[static_cast<std::size_t>(t - 1)];
    r.tip_final = {10.0 + off.u, 12.0 + off.v};
    fx.pred.push_back(r);
  }
  return fx;
}

}  // namespace

TEST_CASE("exact predictions give zero distance everywhere") {
  auto fx = make_fixture({{0, 0}, {0, 0}, {0, 0}}, "fluoro");
  auto d = sequence_distances_mm(fx.pred, fx.gt, 0.308);
  REQUIRE(d.size() == 3);
  for (double v : d) CHECK(v == 0.0);
}

TEST_CASE("a (3,4) pixel offset at 0.308 mm spacing is exactly 1.540 mm") {
  auto fx = make_fixture({{3, 4}, {3, 4}}, "fluoro");
  auto d = sequence_distances_mm(fx.pred, fx.gt, 0.308);
  REQUIRE(d.size() == 2);
  for (double v : d) CHECK(std::fabs(v - 1.540) < 1e-12);

  EvalConfig cfg;
  auto rep = evaluate({fx.pred}, {fx.gt}, cfg);
  CHECK(std::fabs(rep.all().median_mm - 1.540) < 1e-12);
  CHECK(std::fabs(rep.all().mean_mm - 1.540) < 1e-12);
  CHECK(rep.all().std_mm == 0.0);
  CHECK(rep.all().n_frames == 2);
}

TEST_CASE("unannotated frames are skipped, frame 0 always excluded") {
  auto fx = make_fixture({{1, 0}, {2, 0}, {3, 0}}, "fluoro");
  fx.gt.frames[2].tip_gt.reset();
  auto d = sequence_distances_mm(fx.pred, fx.gt, 1.0);
  REQUIRE(d.size() == 2);
  CHECK(d[0] == 1.0);
  CHECK(d[1] == 3.0);
}

TEST_CASE("frame count mismatch is an error") {
  auto fx = make_fixture({{1, 0}}, "fluoro");
  fx.pred.pop_back();
  CHECK_THROWS_AS(sequence_distances_mm(fx.pred, fx.gt, 1.0), TensorError);
}

TEST_CASE("percentile interpolation on a sorted vector") {
  std::vector<double> v{1.0, 2.0, 3.0, 4.0, 5.0};
  CHECK(percentile_sorted(v, 0) == 1.0);
  CHECK(percentile_sorted(v, 50) == 3.0);
  CHECK(percentile_sorted(v, 100) == 5.0);
  CHECK(std::fabs(percentile_sorted(v, 25) - 2.0) < 1e-12);
  CHECK(std::fabs(percentile_sorted(v, 90) - 4.6) < 1e-12);
  CHECK(percentile_sorted({7.0}, 50) == 7.0);
}

TEST_CASE("report statistics match a scalar reimplementation") {
  std::vector<Vec2> offs{{1, 1}, {2, 0}, {0, 3}, {4, 2}, {1, 5}};
  auto fx = make_fixture(offs, "angio");
  EvalConfig cfg;
  auto rep = evaluate({fx.pred}, {fx.gt}, cfg);

  std::vector<double> d;
  for (const auto& o : offs) d.push_back(std::hypot(o.u, o.v) * 0.308);
  std::sort(d.begin(), d.end());
  const double median = d[2];
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(d.size());
  double var = 0.0;
  for (double v : d) var += (v - mean) * (v - mean);
  const double stdev = std::sqrt(var / static_cast<double>(d.size()));

  CHECK(std::fabs(rep.all().median_mm - median) <= 1e-12);
  CHECK(std::fabs(rep.all().mean_mm - mean) <= 1e-12);
  CHECK(std::fabs(rep.all().std_mm - stdev) <= 1e-12);
  REQUIRE(rep.rows.size() == 2);  // "angio" + "All"
  CHECK(rep.rows[0].scenario == "angio");
  CHECK(rep.rows[0].median_mm == rep.all().median_mm);
}

TEST_CASE("scenario filter restricts the report") {
  auto fa = make_fixture({{1, 0}, {1, 0}}, "fluoro");
  auto fb = make_fixture({{5, 0}, {5, 0}}, "devices");
  EvalConfig cfg;
  cfg.pixel_spacing_mm = 1.0;
  cfg.scenario_filter = "devices";
  auto rep = evaluate({fa.pred, fb.pred}, {fa.gt, fb.gt}, cfg);
  CHECK(rep.all().n_frames == 2);
  CHECK(rep.all().median_mm == 5.0);
}

TEST_CASE("formatted report renders the reference row 1.08 / 1.63 / 1.70") {
  // Distances constructed so median = 1.08, mean = 1.63, std = 1.70 exactly:
  // {0, 0, 1.08, x, y} with x + y and x^2 + y^2 solved from the targets.
  const double m = 1.08, mu = 1.63, s = 1.70, n = 5;
  const double sum_xy = n * mu - m;                        // x + y
  const double p_plus_q = sum_xy - 2.0 * mu;               // (x-mu) + (y-mu)
  const double sq = n * s * s - 2.0 * mu * mu - (m - mu) * (m - mu);
  const double pq = (p_plus_q * p_plus_q - sq) / 2.0;
  const double disc = std::sqrt(p_plus_q * p_plus_q - 4.0 * pq);
  const double x = mu + (p_plus_q - disc) / 2.0;
  const double y = mu + (p_plus_q + disc) / 2.0;
  REQUIRE(x >= m);

  EvalConfig cfg;
  cfg.pixel_spacing_mm = 1.0;  // offsets below are directly in mm
  auto fx = make_fixture({{0, 0}, {0, 0}, {m, 0}, {x, 0}, {y, 0}}, "fluoro");
  auto rep = evaluate({fx.pred}, {fx.gt}, cfg);
  CHECK(std::fabs(rep.all().median_mm - 1.08) < 1e-9);
  CHECK(std::fabs(rep.all().mean_mm - 1.63) < 1e-9);
  CHECK(std::fabs(rep.all().std_mm - 1.70) < 1e-9);

  const std::string table = rep.format_table();
  CHECK(table.find("scenario") != std::string::npos);
  // The "All" row renders median / mean / std in order.
  const auto all_pos = table.find("All");
  REQUIRE(all_pos != std::string::npos);
  const std::string all_row = table.substr(all_pos);
  const auto p1 = all_row.find("1.08");
  const auto p2 = all_row.find("1.63");
  const auto p3 = all_row.find("1.70");
  REQUIRE(p1 != std::string::npos);
  REQUIRE(p2 != std::string::npos);
  REQUIRE(p3 != std::string::npos);
  CHECK(p1 < p2);
  CHECK(p2 < p3);
}

TEST_CASE("json report carries rows and percentiles") {
  auto fx = make_fixture({{3, 4}, {3, 4}}, "fluoro");
  auto rep = evaluate({fx.pred}, {fx.gt}, EvalConfig{});
  const std::string j = rep.to_json();
  CHECK(j.find("\"median_mm\"") != std::string::npos);
  CHECK(j.find("\"percentiles\"") != std::string::npos);
  CHECK(j.find("1.54") != std::string::npos);
}

TEST_CASE("invalid spacing is rejected") {
  auto fx = make_fixture({{1, 0}}, "fluoro");
  EvalConfig cfg;
  cfg.pixel_spacing_mm = 0.0;
  CHECK_THROWS_AS(evaluate({fx.pred}, {fx.gt}, cfg), TensorError);
}
