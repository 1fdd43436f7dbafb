#pragma once

#include <vector>

#include "contrack/nn.hpp"
#include "contrack/synthcath.hpp"
#include "contrack/tensor.hpp"

namespace contrack {

struct LocalizerConfig {
  int search_size = 96;
  int template_size = 48;
  int enc_channels = 32;  // feature channels C
  int enc_stride = 8;     // total encoder stride
  int d_model = 32;
  int heads = 4;
  int enc_layers = 2;
  int dec_layers = 2;
  int d_ff = 64;
  int max_templates = 3;
  // One positional table shared by all template slots instead of a table per
  // slot; makes the fusion invariant to template order.
  bool shared_template_pos = false;
  double sigma = 2.0;  // Gaussian target width in px

  int search_tokens() const {
    const int t = search_size / enc_stride;
    return t * t;
  }
  int template_tokens() const {
    const int t = template_size / enc_stride;
    return t * t;
  }
};

struct LossWeights {
  double x_bce = 1.0, x_dice = 1.0, m_bce = 1.0, m_dice = 1.0;
  double sigma = 2.0;
};

struct SpatialPrediction {
  Tensor tip_heatmap;  // [H,W], values in (0,1)
  Tensor body_mask;    // [H,W], values in (0,1)
  Vec2 tip;            // soft-argmax readout
  double confidence = 0.0;
  bool degenerate = false;
};

// 4-block CNN standing in for the ResNet backbone: conv3x3 + relu per block,
// the first three blocks downsample by 2.
struct FeatureEncoder {
  std::vector<nn::Conv2d> convs;
  int out_channels = 0;
  int stride = 0;

  FeatureEncoder() = default;
  FeatureEncoder(int channels, int stride, Rng& rng);
  Tensor forward(const Tensor& image) const;  // [H,W] -> [C, H/s, W/s]
  void collect(const std::string& prefix, nn::ParamMap& pm) const;
};

// 6-layer FCN prediction head: 3 channel-narrowing convs, then 3 upsample+conv
// stages restoring the search resolution; sigmoid output.
struct FcnHead {
  std::vector<nn::Conv2d> down;
  std::vector<nn::Conv2d> up;

  FcnHead() = default;
  FcnHead(int d, Rng& rng);
  Tensor forward(const Tensor& x) const;  // [d,h,w] -> [8h, 8w] probabilities
  void collect(const std::string& prefix, nn::ParamMap& pm) const;
};

class Localizer {
 public:
  Localizer() = default;
  Localizer(const LocalizerConfig& cfg, Rng& rng);

  const LocalizerConfig& config() const { return cfg_; }

  Tensor encode(const Tensor& image) const;

  // Projects, flattens, adds positional embeddings, and runs the encoder
  // stack over Concat(search, t1, ..., tn) tokens. attn_out, when given,
  // receives per-layer per-head attention weight matrices.
  Tensor fuse(const Tensor& search_features,
              const std::vector<Tensor>& template_features,
              std::vector<Tensor>* attn_out = nullptr) const;

  SpatialPrediction decode(const Tensor& fused_tokens) const;

  SpatialPrediction forward(const Tensor& search_image,
                            const std::vector<Tensor>& template_images) const;

  nn::ParamMap params() const;

 private:
  LocalizerConfig cfg_;
  FeatureEncoder encoder_;
  nn::Conv2d proj_;                     // 1x1, C -> d
  Tensor pos_search_;                   // [L_s, d]
  std::vector<Tensor> pos_template_;    // per slot [L_t, d]
  std::vector<nn::EncoderLayer> enc_;
  std::vector<nn::DecoderLayer> dec_;
  Tensor queries_;                      // [2, d]: e1 = tip, e2 = mask
  FcnHead tip_head_, mask_head_;
};

// Eq.-style combined loss: BCE + Dice on the Gaussian-smoothed tip target,
// plus BCE + Dice on the body mask when one is available.
Tensor spatial_loss(const SpatialPrediction& pred, const Vec2& gt_tip,
                    const Tensor* gt_mask, const LossWeights& w);

}  // namespace contrack
