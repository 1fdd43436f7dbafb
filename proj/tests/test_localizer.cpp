#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "contrack/localizer.hpp"
#include "oracles.hpp"

using namespace contrack;

namespace {

LocalizerConfig tiny_config() {
  LocalizerConfig cfg;
  cfg.search_size = 24;
  cfg.template_size = 16;
  cfg.enc_channels = 8;
  cfg.enc_stride = 8;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.d_ff = 16;
  cfg.max_templates = 2;
  return cfg;
}

void set_identity(nn::Linear& lin) {
  const int d = lin.w.dim(0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) lin.w.data()[i * d + j] = (i == j) ? 1.0 : 0.0;
  for (auto& v : lin.b.data()) v = 0.0;
}

}  // namespace

TEST_CASE("single-head attention with identity weights matches the closed form") {
  // softmax(Q K^T / sqrt(d)) V with d = 4.
  const int L = 5, d = 4;
  Rng rng(1);
  nn::MultiHeadAttention mha(d, 1, rng);
  set_identity(mha.wq);
  set_identity(mha.wk);
  set_identity(mha.wv);
  set_identity(mha.wo);

  Tensor x = Tensor::randn({L, d}, rng);
  Tensor out = mha.forward(x, x);

  std::vector<double> xt(static_cast<std::size_t>(d) * L);
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < d; ++j) xt[j * L + i] = x.data()[i * d + j];
  auto scores = oracle::matmul(x.data(), xt, L, d, L);
  for (auto& s : scores) s /= std::sqrt(static_cast<double>(d));
  auto attn = oracle::softmax_rows(scores, L, L);
  auto expect = oracle::matmul(attn, x.data(), L, L, d);
  for (int i = 0; i < L * d; ++i)
    CHECK(std::fabs(out.data()[i] - expect[i]) < 1e-10);
}

TEST_CASE("attention weight rows sum to one for every head and layer") {
  Rng rng(2);
  nn::EncoderLayer layer(8, 2, 16, rng);
  Tensor x = Tensor::randn({6, 8}, rng);
  std::vector<Tensor> attn;
  layer.forward(x, &attn);
  REQUIRE(attn.size() == 2);
  for (const auto& a : attn) {
    REQUIRE(a.shape() == std::vector<int>{6, 6});
    for (int r = 0; r < 6; ++r) {
      double s = 0.0;
      for (int c = 0; c < 6; ++c) s += a.at({r, c});
      CHECK(std::fabs(s - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("gaussian heatmap: peak one, e^-1 at distance sigma, zero past 3 sigma") {
  const double sigma = 2.0;
  Tensor h = nn::gaussian_heatmap(21, 21, 10.0, 10.0, sigma);
  CHECK(h.at({10, 10}) == 1.0);
  CHECK(std::fabs(h.at({10, 12}) - std::exp(-1.0)) < 1e-12);  // dist = sigma
  CHECK(std::fabs(h.at({10, 12}) - 0.36787944117144233) < 1e-12);
  CHECK(h.at({10, 17}) == 0.0);  // dist 7 > 3 sigma
  CHECK(h.at({0, 0}) == 0.0);
}

TEST_CASE("bce of a constant half prediction is ln 2") {
  Tensor p = Tensor::full({4, 4}, 0.5);
  Tensor t = Tensor::full({4, 4}, 1.0);
  CHECK(std::fabs(nn::bce_loss(p, t).item() - std::log(2.0)) < 1e-11);
}

TEST_CASE("dice loss is zero for a perfect binary prediction") {
  Tensor t = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  CHECK(std::fabs(nn::dice_loss(t, t).item()) < 1e-5);
}

TEST_CASE("soft argmax recovers an isolated peak exactly") {
  Tensor h = Tensor::zeros({16, 16});
  h.data()[7 * 16 + 9] = 0.8;
  auto r = nn::soft_argmax(h);
  CHECK(r.u == 9.0);
  CHECK(r.v == 7.0);
  CHECK(r.confidence == 0.8);
  CHECK_FALSE(r.degenerate);
}

TEST_CASE("soft argmax of a symmetric blob is subpixel at the centroid") {
  Tensor h = nn::gaussian_heatmap(20, 20, 8.5, 11.25, 2.0);
  auto r = nn::soft_argmax(h);
  CHECK(std::fabs(r.u - 8.5) < 0.05);
  CHECK(std::fabs(r.v - 11.25) < 0.05);
}

TEST_CASE("soft argmax of an all-zero map is degenerate at the center") {
  auto r = nn::soft_argmax(Tensor::zeros({10, 10}));
  CHECK(r.degenerate);
  CHECK(r.u == 4.5);
  CHECK(r.v == 4.5);
  CHECK(r.confidence == 0.0);
}

TEST_CASE("feature encoder and prediction shapes") {
  Rng rng(3);
  auto cfg = tiny_config();
  Localizer loc(cfg, rng);

  Tensor search = Tensor::randn({cfg.search_size, cfg.search_size}, rng, 0.1);
  Tensor feat = loc.encode(search);
  CHECK(feat.shape() == std::vector<int>{cfg.enc_channels, 3, 3});

  Tensor tmpl = Tensor::randn({cfg.template_size, cfg.template_size}, rng, 0.1);
  auto pred = loc.forward(search, {tmpl});
  CHECK(pred.tip_heatmap.shape() == std::vector<int>{24, 24});
  CHECK(pred.body_mask.shape() == std::vector<int>{24, 24});
  for (double v : pred.tip_heatmap.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK(pred.tip.u >= 0.0);
  CHECK(pred.tip.u <= 23.0);
}

TEST_CASE("fused token count covers search plus all template slots") {
  Rng rng(4);
  auto cfg = tiny_config();
  Localizer loc(cfg, rng);
  Tensor s = loc.encode(Tensor::randn({24, 24}, rng, 0.1));
  Tensor t1 = loc.encode(Tensor::randn({16, 16}, rng, 0.1));
  Tensor t2 = loc.encode(Tensor::randn({16, 16}, rng, 0.1));
  Tensor fused = loc.fuse(s, {t1, t2});
  CHECK(fused.shape() ==
        std::vector<int>{cfg.search_tokens() + 2 * cfg.template_tokens(), cfg.d_model});
}

TEST_CASE("shared template positions make fusion order-invariant") {
  Rng rng(5);
  auto cfg = tiny_config();
  cfg.shared_template_pos = true;
  Localizer loc(cfg, rng);
  Tensor search = Tensor::randn({24, 24}, rng, 0.1);
  Tensor a = Tensor::randn({16, 16}, rng, 0.1);
  Tensor b = Tensor::randn({16, 16}, rng, 0.1);
  auto p1 = loc.forward(search, {a, b});
  auto p2 = loc.forward(search, {b, a});
  for (std::size_t i = 0; i < p1.tip_heatmap.size(); ++i)
    CHECK(std::fabs(p1.tip_heatmap.data()[i] - p2.tip_heatmap.data()[i]) < 1e-12);
}

TEST_CASE("per-slot template positions are order-sensitive") {
  Rng rng(6);
  auto cfg = tiny_config();
  REQUIRE_FALSE(cfg.shared_template_pos);
  Localizer loc(cfg, rng);
  Tensor search = Tensor::randn({24, 24}, rng, 0.1);
  Tensor a = Tensor::randn({16, 16}, rng, 0.5);
  Tensor b = Tensor::randn({16, 16}, rng, 0.5);
  auto p1 = loc.forward(search, {a, b});
  auto p2 = loc.forward(search, {b, a});
  double diff = 0.0;
  for (std::size_t i = 0; i < p1.tip_heatmap.size(); ++i)
    diff = std::max(diff, std::fabs(p1.tip_heatmap.data()[i] - p2.tip_heatmap.data()[i]));
  CHECK(diff > 1e-9);
}

TEST_CASE("spatial loss rejects a tip outside the image") {
  Rng rng(7);
  auto cfg = tiny_config();
  Localizer loc(cfg, rng);
  auto pred = loc.forward(Tensor::randn({24, 24}, rng, 0.1),
                          {Tensor::randn({16, 16}, rng, 0.1)});
  CHECK_THROWS_AS(spatial_loss(pred, Vec2{40.0, 5.0}, nullptr, LossWeights{}),
                  TensorError);
}

TEST_CASE("spatial loss gradient matches finite differences") {
  Rng rng(8);
  auto cfg = tiny_config();
  cfg.enc_channels = 4;
  cfg.d_model = 4;
  cfg.heads = 1;
  cfg.d_ff = 8;
  Localizer loc(cfg, rng);
  Tensor search = Tensor::randn({24, 24}, rng, 0.3);
  Tensor tmpl = Tensor::randn({16, 16}, rng, 0.3);
  Tensor gt_mask = nn::gaussian_heatmap(24, 24, 12.0, 12.0, 4.0);

  auto fwd = [&]() {
    auto pred = loc.forward(search, {tmpl});
    return spatial_loss(pred, Vec2{12.0, 11.0}, &gt_mask, LossWeights{});
  };
  auto pm = loc.params();
  // Spot-check a few parameters from different stages.
  std::vector<Tensor> probe{*pm.find("enc.conv0.w"), *pm.find("queries"),
                            *pm.find("tip_head.up2.b")};
  auto res = oracle::grad_check(fwd, probe);
  CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("a few gradient steps reduce the spatial loss") {
  Rng rng(9);
  auto cfg = tiny_config();
  Localizer loc(cfg, rng);
  auto rec = generate_sequence(31, 2, "fluoro", MotionModel{}, 32);
  Tensor full = rec.frames[0].image.to_tensor();
  Tensor search = narrow(narrow(full, 0, 4, 24), 1, 4, 24).detach();
  Tensor tmpl = narrow(narrow(full, 0, 8, 16), 1, 8, 16).detach();
  Tensor full_mask = rec.frames[0].mask_gt->to_tensor();
  Tensor gt_mask = narrow(narrow(full_mask, 0, 4, 24), 1, 4, 24).detach();
  const Vec2 gt{rec.frames[0].tip_gt->u - 4.0, rec.frames[0].tip_gt->v - 4.0};

  auto pm = loc.params();
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 15; ++step) {
    GradTape tape;
    auto pred = loc.forward(search, {tmpl});
    Tensor loss = spatial_loss(pred, gt, &gt_mask, LossWeights{});
    if (step == 0) first = loss.item();
    last = loss.item();
    tape.backward(loss);
    for (auto& [name, t] : pm.items) {
      auto& g = t.grad();
      for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] -= 0.05 * g[i];
    }
    pm.zero_grad();
  }
  CHECK(last < first);
}
