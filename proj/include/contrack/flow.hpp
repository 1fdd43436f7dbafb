#pragma once

#include <vector>

#include "contrack/nn.hpp"
#include "contrack/synthcath.hpp"
#include "contrack/tensor.hpp"

namespace contrack {

struct FlowConfig {
  int stride = 4;          // feature downsampling
  int feat_dim = 32;       // D_f
  int gru_iters = 4;       // k
  int lookup_radius = 3;   // r
  int hidden_dim = 32;
  int motion_dim = 32;
  // Scale correlations by 1/sqrt(D_f); off reproduces the unscaled inner
  // product literally.
  bool scale_by_sqrt_df = true;
  double heatmap_sigma = 2.0;
  int crop_margin = 16;
};

// 6-block residual encoder over a segmentation map, total stride 4.
struct FlowFeatureEncoder {
  struct ResBlock {
    nn::Conv2d c1, c2;
    nn::Conv2d skip;  // 1x1, present when shape changes
    bool has_skip = false;
  };
  std::vector<ResBlock> blocks;
  int stride = 4;

  FlowFeatureEncoder() = default;
  FlowFeatureEncoder(int feat_dim, Rng& rng);
  Tensor forward(const Tensor& mask) const;  // [H,W] -> [D_f, H/4, W/4]
  void collect(const std::string& prefix, nn::ParamMap& pm) const;
};

// All-pairs correlation plus three average-pooled levels. Level i has shape
// [H*W, H/2^i, W/2^i]: first axis indexes source pixels row-major.
struct CorrelationPyramid {
  std::vector<Tensor> levels;
  int h = 0, w = 0;
};

CorrelationPyramid correlation_volume(const Tensor& feat_a, const Tensor& feat_b,
                                      bool scale_by_sqrt_df = true);

// Per-pixel correlation features: bilinear samples in a (2r+1)^2 window
// around each pixel's flow-displaced position at every pyramid level.
// Output: [levels*(2r+1)^2, H, W]. Flow is treated as constant.
Tensor lookup(const CorrelationPyramid& pyr, const Tensor& flow, int radius = 3);

// Conv-GRU cell over [C,H,W] maps.
struct ConvGru {
  nn::Conv2d wz, wr, wh;
  int hidden = 0;

  ConvGru() = default;
  ConvGru(int hidden_dim, int input_dim, Rng& rng);
  Tensor step(const Tensor& h, const Tensor& x) const;
  void collect(const std::string& prefix, nn::ParamMap& pm) const;
};

class FlowEstimator {
 public:
  FlowEstimator() = default;
  FlowEstimator(const FlowConfig& cfg, Rng& rng);

  const FlowConfig& config() const { return cfg_; }

  Tensor encode(const Tensor& mask) const { return encoder_.forward(mask); }

  // Iterative refinement from f_0 = 0; returns flow at feature resolution
  // [2, H/stride, W/stride]. Additive updates by construction.
  Tensor refine_flow(const Tensor& feat_a, const Tensor& feat_b, int iters) const;
  Tensor refine_flow(const Tensor& feat_a, const Tensor& feat_b) const {
    return refine_flow(feat_a, feat_b, cfg_.gru_iters);
  }

  // Full-resolution flow between two masks (bilinear upsample, magnitude
  // scaled by stride).
  Tensor flow_between(const Tensor& mask_prev, const Tensor& mask_cur) const;

  nn::ParamMap params() const;

 private:
  FlowConfig cfg_;
  FlowFeatureEncoder encoder_;
  nn::Conv2d motion_conv_;  // 1x1 over lookup features
  ConvGru gru_;
  nn::Conv2d delta1_, delta2_;  // 2-layer delta-flow head
};

Tensor upsample_flow(const Tensor& flow, int stride);

struct WarpedTip {
  Vec2 point;
  Tensor heatmap;  // Gaussian rendered at the warped point
  bool clamped = false;
};

// x̂^f: displace the previous tip by the flow sampled at its location.
WarpedTip warp_point(const Vec2& prev_tip, const Tensor& flow_full_res,
                     double sigma = 2.0);

struct CropRegion {
  int x0 = 0, y0 = 0, w = 0, h = 0;
  bool whole_image = false;  // both masks empty -> full image fallback

  Vec2 to_local(const Vec2& p) const { return {p.u - x0, p.v - y0}; }
  Vec2 to_global(const Vec2& p) const { return {p.u + x0, p.v + y0}; }
};

// Tight union bounding box of super-threshold pixels in both masks, expanded
// by margin and snapped to a stride multiple.
CropRegion crop_for_flow(const Tensor& mask_prev, const Tensor& mask_cur,
                         int margin = 16, int stride = 8);
Tensor crop_tensor(const Tensor& map, const CropRegion& c);

// Mean L1 endpoint error over mask-positive pixels (full resolution).
Tensor flow_loss(const Tensor& pred_flow, const Tensor& gt_flow, const Tensor& mask);

}  // namespace contrack
