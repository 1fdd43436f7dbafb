#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "contrack/synthcath.hpp"

using namespace contrack;

namespace {

double dist_to_mask(const Image& mask, const Vec2& p) {
  double best = 1e18;
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x)
      if (mask.at(y, x) > 0.5)
        best = std::min(best, std::hypot(x - p.u, y - p.v));
  return best;
}

int connected_components(const Image& mask) {
  std::vector<int> label(mask.px.size(), 0);
  int comps = 0;
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x) {
      if (mask.at(y, x) <= 0.5 || label[y * mask.w + x]) continue;
      ++comps;
      std::vector<std::pair<int, int>> stack{{y, x}};
      label[y * mask.w + x] = comps;
      while (!stack.empty()) {
        auto [cy, cx] = stack.back();
        stack.pop_back();
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = cy + dy, nx = cx + dx;
            if (ny < 0 || ny >= mask.h || nx < 0 || nx >= mask.w) continue;
            if (mask.at(ny, nx) > 0.5 && !label[ny * mask.w + nx]) {
              label[ny * mask.w + nx] = comps;
              stack.push_back({ny, nx});
            }
          }
      }
    }
  return comps;
}

// Dark-pixel map of everything drawn on the background (catheter plus
// distractors).
Image dark_pixels(const Image& img, double thresh = 0.55) {
  Image out(img.w, img.h, 0.0);
  for (std::size_t i = 0; i < img.px.size(); ++i)
    out.px[i] = img.px[i] < thresh ? 1.0 : 0.0;
  return out;
}

}  // namespace

TEST_CASE("zero motion and zero noise keep the tip fixed") {
  GenOptions opts;
  opts.noise_sigma = 0.0;
  auto rec = generate_sequence(42, 5, "fluoro", MotionModel{}, 64, opts);
  REQUIRE(rec.frames.size() == 5);
  const Vec2 t0 = *rec.frames[0].tip_gt;
  for (const auto& f : rec.frames) {
    REQUIRE(f.tip_gt.has_value());
    CHECK(f.tip_gt->u == t0.u);
    CHECK(f.tip_gt->v == t0.v);
  }
}

TEST_CASE("same seed twice gives bitwise-identical sequences") {
  auto a = generate_sequence(7, 6, "angio", MotionModel::typical(), 64);
  auto b = generate_sequence(7, 6, "angio", MotionModel::typical(), 64);
  REQUIRE(a.frames.size() == b.frames.size());
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    CHECK(a.frames[i].image.px == b.frames[i].image.px);
    CHECK(a.frames[i].tip_gt->u == b.frames[i].tip_gt->u);
  }
}

TEST_CASE("frame-to-frame tip displacement bounded by sinusoid derivative") {
  MotionModel m;
  m.cardiac_amp_px = 5.0;
  m.cardiac_period_frames = 20.0;
  GenOptions opts;
  opts.noise_sigma = 0.0;
  auto rec = generate_sequence(3, 20, "fluoro", m, 64, opts);
  // |d/dt A sin(2*pi*t/T)| <= 2*pi*A/T; drift 0; +1 px slack.
  const double bound = 2.0 * M_PI * 5.0 / 20.0 + 1.0;
  for (std::size_t t = 1; t < rec.frames.size(); ++t) {
    const Vec2 a = *rec.frames[t - 1].tip_gt;
    const Vec2 b = *rec.frames[t].tip_gt;
    CHECK(std::hypot(b.u - a.u, b.v - a.v) <= bound);
  }
}

TEST_CASE("tip always lies on the rendered catheter mask") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
    auto rec = generate_sequence(seed, 4, "fluoro", MotionModel::typical(), 64);
    for (const auto& f : rec.frames)
      if (f.tip_gt && f.mask_gt) CHECK(dist_to_mask(*f.mask_gt, *f.tip_gt) <= 1.0);
  }
}

TEST_CASE("fluoro has one curve component, devices at least two") {
  GenOptions opts;
  opts.noise_sigma = 0.0;
  auto fl = generate_sequence(5, 3, "fluoro", MotionModel{}, 64, opts);
  CHECK(connected_components(*fl.frames[0].mask_gt) == 1);

  auto dv = generate_sequence(5, 3, "devices", MotionModel{}, 64, opts);
  CHECK(connected_components(dark_pixels(dv.frames[0].image)) >= 2);
}

TEST_CASE("invalid scenario is rejected") {
  CHECK_THROWS_AS(generate_sequence(1, 3, "ct-scan", MotionModel{}, 64), TensorError);
}

TEST_CASE("flow pair: zero flow is identity") {
  auto rec = generate_sequence(11, 2, "fluoro", MotionModel{}, 64);
  Tensor mask = rec.frames[0].mask_gt->to_tensor();
  auto pair = make_flow_training_pair(mask, uniform_flow(64, 64, 0, 0));
  CHECK(pair.warped.data() == mask.data());
}

TEST_CASE("flow pair: uniform integer flow shifts the mask") {
  auto rec = generate_sequence(12, 2, "fluoro", MotionModel{}, 64);
  Tensor mask = rec.frames[0].mask_gt->to_tensor();
  auto pair = make_flow_training_pair(mask, uniform_flow(64, 64, 3, 0));
  for (int y = 0; y < 64; ++y)
    for (int x = 3; x < 64; ++x)
      CHECK(pair.warped.at({y, x}) == mask.at({y, x - 3}));
}

TEST_CASE("flow pair: inverse warp round trip recovers the mask") {
  auto rec = generate_sequence(13, 2, "fluoro", MotionModel{}, 64);
  Tensor mask = rec.frames[0].mask_gt->to_tensor();
  Rng rng(99);
  Tensor flow = random_smooth_flow(64, 64, 3.0, rng);
  Tensor warped = warp_by_flow(mask, flow);
  Tensor back = warp_by_flow(warped, mul_scalar(flow, -1.0));
  double inter = 0.0, uni = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const bool a = mask.data()[i] > 0.5, b = back.data()[i] > 0.5;
    inter += (a && b) ? 1.0 : 0.0;
    uni += (a || b) ? 1.0 : 0.0;
  }
  CHECK(inter / uni > 0.9);
}

TEST_CASE("flow pair rejects displacements beyond image/4") {
  Tensor mask = Tensor::zeros({16, 16});
  CHECK_THROWS_AS(make_flow_training_pair(mask, uniform_flow(16, 16, 5.0, 0.0)),
                  TensorError);
}

TEST_CASE("save/load round trip is lossless") {
  const std::string dir = "/tmp/contrack_test_seq";
  std::filesystem::remove_all(dir);
  GenOptions opts;
  opts.annotate_every_k = 2;
  auto rec = generate_sequence(17, 5, "devices", MotionModel::typical(), 64, opts);
  save_sequence(rec, dir);
  auto rec2 = load_sequence(dir);
  REQUIRE(rec2.frames.size() == rec.frames.size());
  CHECK(rec2.scenario == rec.scenario);
  CHECK(rec2.pixel_spacing_mm == rec.pixel_spacing_mm);
  CHECK(rec2.seed == rec.seed);
  for (std::size_t i = 0; i < rec.frames.size(); ++i) {
    CHECK(rec2.frames[i].image.px == rec.frames[i].image.px);
    CHECK(rec2.frames[i].tip_gt.has_value() == rec.frames[i].tip_gt.has_value());
    if (rec.frames[i].tip_gt) {
      CHECK(rec2.frames[i].tip_gt->u == rec.frames[i].tip_gt->u);
      CHECK(rec2.frames[i].tip_gt->v == rec.frames[i].tip_gt->v);
    }
  }
}

TEST_CASE("load with missing mask file leaves mask absent") {
  const std::string dir = "/tmp/contrack_test_seq_nomask";
  std::filesystem::remove_all(dir);
  auto rec = generate_sequence(19, 3, "fluoro", MotionModel{}, 64);
  save_sequence(rec, dir);
  std::filesystem::remove(dir + "/masks/00001.pgm");
  auto rec2 = load_sequence(dir);
  CHECK_FALSE(rec2.frames[1].mask_gt.has_value());
  CHECK(rec2.frames[0].mask_gt.has_value());
}

TEST_CASE("corrupt index names the offending key") {
  const std::string dir = "/tmp/contrack_test_seq_bad";
  std::filesystem::remove_all(dir);
  auto rec = generate_sequence(23, 2, "fluoro", MotionModel{}, 64);
  save_sequence(rec, dir);
  {
    std::ifstream in(dir + "/seq.json");
    std::string text((std::istreambuf_iterator<char>(in)), {});
    auto pos = text.find("\"scenario\"");
    text.replace(pos, 10, "\"scenari0\"");
    std::ofstream out(dir + "/seq.json");
    out << text;
  }
  CHECK_THROWS_WITH_AS(load_sequence(dir), doctest::Contains("scenario"), TensorError);
}

TEST_CASE("annotate_every_k thins annotations") {
  GenOptions opts;
  opts.annotate_every_k = 3;
  auto rec = generate_sequence(29, 7, "fluoro", MotionModel{}, 64, opts);
  for (int t = 0; t < 7; ++t)
    CHECK(rec.frames[t].tip_gt.has_value() == (t % 3 == 0));
}
