#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "contrack/flow.hpp"
#include "oracles.hpp"

using namespace contrack;

namespace {

FlowConfig tiny_config() {
  FlowConfig cfg;
  cfg.feat_dim = 8;
  cfg.hidden_dim = 8;
  cfg.motion_dim = 8;
  cfg.lookup_radius = 1;
  cfg.gru_iters = 2;
  return cfg;
}

}  // namespace

TEST_CASE("correlation volume matches the quadruple-loop oracle") {
  // 50+ random instances at tolerance 1e-12, with and without scaling.
  Rng rng(1);
  int instances = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const int d = rng.uniform_int(1, 4);
    const int h = rng.uniform_int(2, 6);
    const int w = rng.uniform_int(2, 6);
    for (bool scale : {true, false}) {
      Tensor a = Tensor::randn({d, h, w}, rng);
      Tensor b = Tensor::randn({d, h, w}, rng);
      auto pyr = correlation_volume(a, b, scale);
      REQUIRE(pyr.levels.size() == 4);
      REQUIRE(pyr.levels[0].shape() == std::vector<int>{h * w, h, w});
      auto expect = oracle::correlation(a.data(), b.data(), d, h, w, scale);
      for (std::size_t i = 0; i < expect.size(); ++i)
        CHECK(std::fabs(pyr.levels[0].data()[i] - expect[i]) <= 1e-12);
      ++instances;
    }
  }
  CHECK(instances >= 50);
}

TEST_CASE("constant feature maps give the closed-form correlation") {
  // a = b = all ones, D = 2: every entry is 2 / sqrt(2) = sqrt(2).
  Tensor ones = Tensor::full({2, 3, 3}, 1.0);
  auto pyr = correlation_volume(ones, ones, true);
  for (double v : pyr.levels[0].data())
    CHECK(std::fabs(v - std::sqrt(2.0)) < 1e-12);
  // Unscaled: exactly D.
  auto raw = correlation_volume(ones, ones, false);
  for (double v : raw.levels[0].data()) CHECK(v == 2.0);
}

TEST_CASE("pyramid levels halve spatially and preserve averages") {
  Rng rng(2);
  Tensor a = Tensor::randn({3, 8, 8}, rng);
  Tensor b = Tensor::randn({3, 8, 8}, rng);
  auto pyr = correlation_volume(a, b);
  CHECK(pyr.levels[1].shape() == std::vector<int>{64, 4, 4});
  CHECK(pyr.levels[2].shape() == std::vector<int>{64, 2, 2});
  CHECK(pyr.levels[3].shape() == std::vector<int>{64, 1, 1});
  // Level 3 is the mean of level 0 over each source pixel's target plane.
  for (int p = 0; p < 64; ++p) {
    double m = 0.0;
    for (int q = 0; q < 64; ++q) m += pyr.levels[0].data()[p * 64 + q];
    CHECK(std::fabs(pyr.levels[3].data()[p] - m / 64.0) < 1e-12);
  }
}

TEST_CASE("zero-flow lookup center tap is the self-correlation") {
  Rng rng(3);
  Tensor a = Tensor::randn({4, 5, 5}, rng);
  Tensor b = Tensor::randn({4, 5, 5}, rng);
  auto pyr = correlation_volume(a, b);
  const int r = 1, win = (2 * r + 1) * (2 * r + 1);
  Tensor feats = lookup(pyr, Tensor::zeros({2, 5, 5}), r);
  REQUIRE(feats.shape() == std::vector<int>{4 * win, 5, 5});
  // Channel at the window center of level 0 is corr[p][p].
  const int center = win / 2;
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) {
      const int p = y * 5 + x;
      CHECK(std::fabs(feats.at({center, y, x}) -
                      pyr.levels[0].at({p, y, x})) < 1e-12);
    }
}

TEST_CASE("integer flow shifts the lookup center tap accordingly") {
  Rng rng(4);
  Tensor a = Tensor::randn({4, 6, 6}, rng);
  Tensor b = Tensor::randn({4, 6, 6}, rng);
  auto pyr = correlation_volume(a, b);
  const int r = 1, win = 9, center = 4;
  Tensor flow = Tensor::zeros({2, 6, 6});
  for (auto i = 0u; i < 36; ++i) flow.data()[i] = 2.0;  // u = +2, v = 0
  Tensor feats = lookup(pyr, flow, r);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6 - 2; ++x) {
      const int p = y * 6 + x;
      const int q = y * 6 + x + 2;
      CHECK(std::fabs(feats.at({center, y, x}) -
                      pyr.levels[0].data()[p * 36 + q]) < 1e-12);
    }
}

TEST_CASE("flow upsampling scales both resolution and magnitude") {
  Tensor flow = Tensor::full({2, 3, 3}, 1.5);
  Tensor up = upsample_flow(flow, 4);
  CHECK(up.shape() == std::vector<int>{2, 12, 12});
  for (double v : up.data()) CHECK(std::fabs(v - 6.0) < 1e-12);
}

TEST_CASE("identical inputs keep the refined flow near zero") {
  Rng rng(5);
  FlowEstimator est(tiny_config(), rng);
  auto rec = generate_sequence(41, 2, "fluoro", MotionModel{}, 32);
  Tensor mask = rec.frames[0].mask_gt->to_tensor();
  Tensor flow = est.flow_between(mask, mask);
  CHECK(flow.shape() == std::vector<int>{2, 32, 32});
  // Untrained nets emit some response, but identical inputs must stay small
  // relative to the lookup range.
  for (double v : flow.data()) CHECK(std::fabs(v) < 8.0);
}

TEST_CASE("warp_point displaces the previous tip by the sampled flow") {
  Tensor flow = Tensor::zeros({2, 16, 16});
  for (int i = 0; i < 256; ++i) {
    flow.data()[i] = 3.0;        // u
    flow.data()[256 + i] = -2.0; // v
  }
  auto w = warp_point(Vec2{5.0, 7.0}, flow);
  CHECK(w.point.u == 8.0);
  CHECK(w.point.v == 5.0);
  CHECK_FALSE(w.clamped);
  CHECK(std::fabs(w.heatmap.at({5, 8}) - 1.0) < 1e-12);
}

TEST_CASE("warp_point clamps when the flow leaves the image") {
  Tensor flow = Tensor::zeros({2, 8, 8});
  for (int i = 0; i < 64; ++i) flow.data()[i] = 100.0;
  auto w = warp_point(Vec2{4.0, 4.0}, flow);
  CHECK(w.clamped);
  CHECK(w.point.u == 7.0);
}

TEST_CASE("crop region covers both masks and snaps to the stride") {
  Tensor a = Tensor::zeros({64, 64});
  Tensor b = Tensor::zeros({64, 64});
  a.data()[20 * 64 + 30] = 1.0;
  b.data()[25 * 64 + 35] = 1.0;
  auto c = crop_for_flow(a, b, 4, 8);
  CHECK_FALSE(c.whole_image);
  CHECK(c.w % 8 == 0);
  CHECK(c.h % 8 == 0);
  CHECK(c.x0 <= 30 - 4);
  CHECK(c.y0 <= 20 - 4);
  CHECK(c.x0 + c.w >= 35 + 4);
  CHECK(c.y0 + c.h >= 25 + 4);
  Vec2 g{35.0, 25.0};
  Vec2 back = c.to_global(c.to_local(g));
  CHECK(back.u == g.u);
  CHECK(back.v == g.v);
}

TEST_CASE("empty masks fall back to the whole image") {
  Tensor z = Tensor::zeros({32, 32});
  auto c = crop_for_flow(z, z, 4, 8);
  CHECK(c.whole_image);
  CHECK(c.w == 32);
  CHECK(c.h == 32);
  CHECK(c.x0 == 0);
}

TEST_CASE("cropped flow equals full-image flow on the crop, up to 1e-9") {
  Rng rng(6);
  FlowEstimator est(tiny_config(), rng);
  auto rec = generate_sequence(43, 2, "fluoro", MotionModel::typical(), 64);
  Tensor prev = rec.frames[0].mask_gt->to_tensor();
  Tensor cur = rec.frames[1].mask_gt->to_tensor();

  Tensor full_flow = est.flow_between(prev, cur);
  auto c = crop_for_flow(prev, cur, est.config().crop_margin,
                         2 * est.config().stride);
  REQUIRE_FALSE(c.whole_image);
  // Explicit crop pipeline: encode + refine + upsample on the crop only.
  Tensor crop_flow = upsample_flow(
      est.refine_flow(est.encode(crop_tensor(prev, c)),
                      est.encode(crop_tensor(cur, c))),
      est.config().stride);

  double max_diff = 0.0;
  for (int y = 0; y < c.h; ++y)
    for (int x = 0; x < c.w; ++x)
      for (int ch = 0; ch < 2; ++ch)
        max_diff = std::max(max_diff,
                            std::fabs(crop_flow.at({ch, y, x}) -
                                      full_flow.at({ch, c.y0 + y, c.x0 + x})));
  CHECK(max_diff < 1e-9);
  // The pasted flow carries no energy outside the crop.
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      if (y < c.y0 || y >= c.y0 + c.h || x < c.x0 || x >= c.x0 + c.w) {
        CHECK(full_flow.at({0, y, x}) == 0.0);
        CHECK(full_flow.at({1, y, x}) == 0.0);
      }

  // warp_point round trip: cropped flow + offset matches the uncropped call.
  const Vec2 tip = *rec.frames[0].tip_gt;
  auto wl = warp_point(c.to_local(tip), crop_flow);
  auto wg = warp_point(tip, full_flow);
  CHECK(std::fabs(c.to_global(wl.point).u - wg.point.u) < 1e-9);
  CHECK(std::fabs(c.to_global(wl.point).v - wg.point.v) < 1e-9);
}

TEST_CASE("flow loss: exact prediction is zero, off-by-one is one") {
  Tensor gt = Tensor::full({2, 8, 8}, 2.0);
  Tensor mask = Tensor::zeros({8, 8});
  mask.data()[3 * 8 + 3] = 1.0;
  mask.data()[4 * 8 + 5] = 1.0;
  CHECK(flow_loss(gt, gt, mask).item() == 0.0);
  Tensor pred = Tensor::full({2, 8, 8}, 3.0);
  CHECK(std::fabs(flow_loss(pred, gt, mask).item() - 1.0) < 1e-12);
}

TEST_CASE("gradient steps reduce the flow loss on a fixed pair") {
  Rng rng(7);
  FlowEstimator est(tiny_config(), rng);
  auto rec = generate_sequence(47, 2, "fluoro", MotionModel{}, 32);
  Tensor prev = rec.frames[0].mask_gt->to_tensor();
  Tensor gt_flow = uniform_flow(32, 32, 2.0, -1.0);
  auto pair = make_flow_training_pair(prev, gt_flow);

  auto pm = est.params();
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 12; ++step) {
    GradTape tape;
    Tensor flow = est.flow_between(prev, pair.warped);
    Tensor loss = flow_loss(flow, gt_flow, prev);
    if (step == 0) first = loss.item();
    last = loss.item();
    tape.backward(loss);
    for (auto& [name, t] : pm.items) {
      auto& g = t.grad();
      for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] -= 0.02 * g[i];
    }
    pm.zero_grad();
  }
  CHECK(last < first);
}

TEST_CASE("refinement gradient matches finite differences") {
  Rng rng(8);
  FlowConfig cfg = tiny_config();
  cfg.feat_dim = 4;
  cfg.hidden_dim = 4;
  cfg.motion_dim = 4;
  FlowEstimator est(cfg, rng);
  Tensor prev = nn::gaussian_heatmap(16, 16, 6.0, 8.0, 3.0);
  Tensor cur = nn::gaussian_heatmap(16, 16, 8.0, 8.0, 3.0);
  // Both ground-truth components are nonzero: the delta head starts at zero,
  // so the first-iteration prediction is exactly zero and a zero ground-truth
  // channel would pin the L1 loss on its kink.
  Tensor gt_flow = uniform_flow(16, 16, 2.0, 0.7);

  // Single refinement iteration: the lookup then samples at the constant
  // f_0 = 0, so finite differences and the tape agree on every path. (Later
  // iterations treat the incoming flow as constant inside the lookup, which
  // finite differences cannot reproduce.)
  auto fwd = [&]() {
    Tensor flow = upsample_flow(
        est.refine_flow(est.encode(prev), est.encode(cur), 1),
        est.config().stride);
    return flow_loss(flow, gt_flow, prev);
  };
  auto pm = est.params();
  std::vector<Tensor> probe{*pm.find("enc.block0.c1.w"), *pm.find("gru.wz.b"),
                            *pm.find("delta2.w")};
  auto res = oracle::grad_check(fwd, probe);
  CHECK(res.max_rel_err < 1e-3);
}
