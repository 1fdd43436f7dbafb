#pragma once

#include "contrack/nn.hpp"
#include "contrack/synthcath.hpp"
#include "contrack/tensor.hpp"

namespace contrack {

struct ScoreMap {
  Tensor fused;     // pre-refinement score, nonnegative
  double alpha = 0.5;
};

// Per-pixel: mask-positive (m > tau) -> (alpha + m) * (xs + xf),
// otherwise xs + xf. Differentiable in xs, xf and m.
ScoreMap fuse_score(const Tensor& tip_spatial, const Tensor& tip_flow,
                    const Tensor& mask, double alpha, double tau_m = 0.5);

// 3-conv refinement head over the fused score map.
class Refiner {
 public:
  Refiner() = default;
  Refiner(int mid_channels, Rng& rng);

  Tensor forward(const Tensor& score) const;  // [H,W] -> [H,W] in (0,1)

  struct Result {
    Tensor heatmap;
    Vec2 tip;
    double confidence = 0.0;
    bool degenerate = false;
  };
  Result refine(const ScoreMap& score) const;

  nn::ParamMap params() const;

 private:
  nn::Conv2d c1_, c2_, c3_;
};

// BCE + Dice of the refined heatmap against the Gaussian tip target.
Tensor refinement_loss(const Tensor& refined, const Vec2& gt_tip, double sigma);

}  // namespace contrack
