#include "contrack/fusion.hpp"

namespace contrack {

ScoreMap fuse_score(const Tensor& tip_spatial, const Tensor& tip_flow,
                    const Tensor& mask, double alpha, double tau_m) {
  if (alpha <= 0.0) throw TensorError("fuse_score: alpha must be positive");
  if (tip_spatial.shape() != tip_flow.shape() || tip_spatial.shape() != mask.shape())
    throw TensorError("fuse_score: map size mismatch");
  const std::size_t n = tip_spatial.size();
  std::vector<double> out(n);
  const auto& xs = tip_spatial.data();
  const auto& xf = tip_flow.data();
  const auto& m = mask.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double s = xs[i] + xf[i];
    out[i] = (m[i] > tau_m) ? (alpha + m[i]) * s : s;
  }
  auto xs_n = tip_spatial.node_ptr();
  auto xf_n = tip_flow.node_ptr();
  auto m_n = mask.node_ptr();
  ScoreMap sm;
  sm.alpha = alpha;
  sm.fused = custom_op(
      "fuse_score", tip_spatial.shape(), std::move(out),
      {tip_spatial, tip_flow, mask},
      [xs_n, xf_n, m_n, alpha, tau_m](TensorNode& nd) {
        for (std::size_t i = 0; i < nd.data.size(); ++i) {
          const double g = nd.grad[i];
          const bool branch = m_n->data[i] > tau_m;
          const double ds = branch ? (alpha + m_n->data[i]) : 1.0;
          if (xs_n->requires_grad) xs_n->grad[i] += g * ds;
          if (xf_n->requires_grad) xf_n->grad[i] += g * ds;
          if (m_n->requires_grad && branch)
            m_n->grad[i] += g * (xs_n->data[i] + xf_n->data[i]);
        }
      });
  return sm;
}

Refiner::Refiner(int mid_channels, Rng& rng)
    : c1_(1, mid_channels, 3, 1, 1, rng),
      c2_(mid_channels, mid_channels, 3, 1, 1, rng),
      c3_(mid_channels, 1, 3, 1, 1, rng) {}

Tensor Refiner::forward(const Tensor& score) const {
  if (score.ndim() != 2) throw TensorError("refine: need 2-d score map");
  Tensor x = reshape(score, {1, score.dim(0), score.dim(1)});
  x = relu(c1_.forward(x));
  x = relu(c2_.forward(x));
  x = sigmoid(c3_.forward(x));
  return reshape(x, {score.dim(0), score.dim(1)});
}

Refiner::Result Refiner::refine(const ScoreMap& score) const {
  Result r;
  r.heatmap = forward(score.fused);
  auto sa = nn::soft_argmax(r.heatmap);
  r.tip = {sa.u, sa.v};
  r.confidence = sa.confidence;
  r.degenerate = sa.degenerate;
  return r;
}

nn::ParamMap Refiner::params() const {
  nn::ParamMap pm;
  c1_.collect("c1.", pm);
  c2_.collect("c2.", pm);
  c3_.collect("c3.", pm);
  return pm;
}

Tensor refinement_loss(const Tensor& refined, const Vec2& gt_tip, double sigma) {
  Tensor target = nn::gaussian_heatmap(refined.dim(0), refined.dim(1),
                                       gt_tip.u, gt_tip.v, sigma);
  return add(nn::bce_loss(refined, target), nn::dice_loss(refined, target));
}

}  // namespace contrack
