#include "contrack/localizer.hpp"

#include <cmath>

namespace contrack {

FeatureEncoder::FeatureEncoder(int channels, int stride, Rng& rng)
    : out_channels(channels), stride(stride) {
  if (stride != 8) throw TensorError("FeatureEncoder: only stride 8 supported");
  const int c1 = std::max(4, channels / 4);
  const int c2 = std::max(8, channels / 2);
  convs.emplace_back(1, c1, 3, 2, 1, rng);
  convs.emplace_back(c1, c2, 3, 2, 1, rng);
  convs.emplace_back(c2, channels, 3, 2, 1, rng);
  convs.emplace_back(channels, channels, 3, 1, 1, rng);
}

Tensor FeatureEncoder::forward(const Tensor& image) const {
  if (image.ndim() != 2) throw TensorError("encode: need a 2-d image tensor");
  if (image.dim(0) % stride != 0 || image.dim(1) % stride != 0)
    throw TensorError("encode: image side not divisible by encoder stride");
  Tensor x = reshape(image, {1, image.dim(0), image.dim(1)});
  for (const auto& c : convs) x = relu(c.forward(x));
  return x;
}

void FeatureEncoder::collect(const std::string& prefix, nn::ParamMap& pm) const {
  for (std::size_t i = 0; i < convs.size(); ++i)
    convs[i].collect(prefix + "conv" + std::to_string(i) + ".", pm);
}

FcnHead::FcnHead(int d, Rng& rng) {
  const int c1 = std::max(4, d / 2);
  const int c2 = std::max(4, d / 4);
  down.emplace_back(d, c1, 3, 1, 1, rng);
  down.emplace_back(c1, c2, 3, 1, 1, rng);
  down.emplace_back(c2, c2, 3, 1, 1, rng);
  up.emplace_back(c2, c2, 3, 1, 1, rng);
  up.emplace_back(c2, c2, 3, 1, 1, rng);
  up.emplace_back(c2, 1, 3, 1, 1, rng);
}

Tensor FcnHead::forward(const Tensor& x) const {
  Tensor h = x;
  for (const auto& c : down) h = relu(c.forward(h));
  for (std::size_t i = 0; i < up.size(); ++i) {
    h = upsample_bilinear(h, 2);
    h = up[i].forward(h);
    if (i + 1 < up.size()) h = relu(h);
  }
  Tensor prob = sigmoid(h);  // [1, 8h, 8w]
  return reshape(prob, {prob.dim(1), prob.dim(2)});
}

void FcnHead::collect(const std::string& prefix, nn::ParamMap& pm) const {
  for (std::size_t i = 0; i < down.size(); ++i)
    down[i].collect(prefix + "down" + std::to_string(i) + ".", pm);
  for (std::size_t i = 0; i < up.size(); ++i)
    up[i].collect(prefix + "up" + std::to_string(i) + ".", pm);
}

Localizer::Localizer(const LocalizerConfig& cfg, Rng& rng)
    : cfg_(cfg),
      encoder_(cfg.enc_channels, cfg.enc_stride, rng),
      proj_(cfg.enc_channels, cfg.d_model, 1, 1, 0, rng) {
  const int ls = cfg.search_tokens();
  const int lt = cfg.template_tokens();
  pos_search_ = Tensor::randn({ls, cfg.d_model}, rng, 0.02);
  pos_search_.node()->requires_grad = true;
  pos_search_.node()->ensure_grad();
  const int n_tables = cfg.shared_template_pos ? 1 : cfg.max_templates;
  for (int i = 0; i < n_tables; ++i) {
    Tensor p = Tensor::randn({lt, cfg.d_model}, rng, 0.02);
    p.node()->requires_grad = true;
    p.node()->ensure_grad();
    pos_template_.push_back(p);
  }
  for (int i = 0; i < cfg.enc_layers; ++i)
    enc_.emplace_back(cfg.d_model, cfg.heads, cfg.d_ff, rng);
  for (int i = 0; i < cfg.dec_layers; ++i)
    dec_.emplace_back(cfg.d_model, cfg.heads, cfg.d_ff, rng);
  queries_ = Tensor::randn({2, cfg.d_model}, rng, 0.02);
  queries_.node()->requires_grad = true;
  queries_.node()->ensure_grad();
  tip_head_ = FcnHead(cfg.d_model, rng);
  mask_head_ = FcnHead(cfg.d_model, rng);
}

Tensor Localizer::encode(const Tensor& image) const { return encoder_.forward(image); }

namespace {

// [C,h,w] features -> [h*w, d] token rows via 1x1 projection.
Tensor tokens_from_features(const nn::Conv2d& proj, const Tensor& feat) {
  Tensor p = proj.forward(feat);  // [d, h, w]
  const int d = p.dim(0), hw = p.dim(1) * p.dim(2);
  return transpose2d(reshape(p, {d, hw}));
}

}  // namespace

Tensor Localizer::fuse(const Tensor& search_features,
                       const std::vector<Tensor>& template_features,
                       std::vector<Tensor>* attn_out) const {
  if (template_features.empty()) throw TensorError("fuse: need at least one template");
  if (static_cast<int>(template_features.size()) > cfg_.max_templates)
    throw TensorError("fuse: too many templates");
  std::vector<Tensor> parts;
  parts.push_back(add(tokens_from_features(proj_, search_features), pos_search_));
  for (std::size_t i = 0; i < template_features.size(); ++i) {
    const Tensor& table =
        cfg_.shared_template_pos ? pos_template_[0] : pos_template_[i];
    parts.push_back(add(tokens_from_features(proj_, template_features[i]), table));
  }
  Tensor tokens = concat(parts, 0);
  for (const auto& layer : enc_) tokens = layer.forward(tokens, attn_out);
  return tokens;
}

SpatialPrediction Localizer::decode(const Tensor& fused_tokens) const {
  const int ls = cfg_.search_tokens();
  if (fused_tokens.dim(0) < ls)
    throw TensorError("decode: token count below search token count");
  const int hs = cfg_.search_size / cfg_.enc_stride;
  Tensor q = queries_;
  for (const auto& layer : dec_) q = layer.forward(q, fused_tokens);

  Tensor search_tokens = narrow(fused_tokens, 0, 0, ls);  // [L_s, d]
  // Dot-product similarity of each query against the search tokens, then
  // per-token reweighting of the encoder features.
  Tensor sim = matmul(q, transpose2d(search_tokens));  // [2, L_s]

  SpatialPrediction out;
  for (int qi = 0; qi < 2; ++qi) {
    Tensor s = flatten(narrow(sim, 0, qi, 1));                    // [L_s]
    Tensor weighted = scale_rows(search_tokens, s);               // [L_s, d]
    Tensor grid = reshape(transpose2d(weighted), {cfg_.d_model, hs, hs});
    Tensor map = (qi == 0) ? tip_head_.forward(grid) : mask_head_.forward(grid);
    if (qi == 0)
      out.tip_heatmap = map;
    else
      out.body_mask = map;
  }
  auto sa = nn::soft_argmax(out.tip_heatmap);
  out.tip = {sa.u, sa.v};
  out.confidence = sa.confidence;
  out.degenerate = sa.degenerate;
  return out;
}

SpatialPrediction Localizer::forward(const Tensor& search_image,
                                     const std::vector<Tensor>& template_images) const {
  std::vector<Tensor> tf;
  tf.reserve(template_images.size());
  for (const auto& t : template_images) tf.push_back(encode(t));
  return decode(fuse(encode(search_image), tf));
}

nn::ParamMap Localizer::params() const {
  nn::ParamMap pm;
  encoder_.collect("enc.", pm);
  proj_.collect("proj.", pm);
  pm.add("pos_search", pos_search_);
  for (std::size_t i = 0; i < pos_template_.size(); ++i)
    pm.add("pos_template" + std::to_string(i), pos_template_[i]);
  for (std::size_t i = 0; i < enc_.size(); ++i)
    enc_[i].collect("fuse" + std::to_string(i) + ".", pm);
  for (std::size_t i = 0; i < dec_.size(); ++i)
    dec_[i].collect("dec" + std::to_string(i) + ".", pm);
  pm.add("queries", queries_);
  tip_head_.collect("tip_head.", pm);
  mask_head_.collect("mask_head.", pm);
  return pm;
}

Tensor spatial_loss(const SpatialPrediction& pred, const Vec2& gt_tip,
                    const Tensor* gt_mask, const LossWeights& w) {
  const int h = pred.tip_heatmap.dim(0), wd = pred.tip_heatmap.dim(1);
  if (gt_tip.u < 0 || gt_tip.u > wd - 1 || gt_tip.v < 0 || gt_tip.v > h - 1)
    throw TensorError("spatial_loss: tip outside image");
  Tensor target = nn::gaussian_heatmap(h, wd, gt_tip.u, gt_tip.v, w.sigma);
  Tensor loss = add(mul_scalar(nn::bce_loss(pred.tip_heatmap, target), w.x_bce),
                    mul_scalar(nn::dice_loss(pred.tip_heatmap, target), w.x_dice));
  if (gt_mask) {
    loss = add(loss, mul_scalar(nn::bce_loss(pred.body_mask, *gt_mask), w.m_bce));
    loss = add(loss, mul_scalar(nn::dice_loss(pred.body_mask, *gt_mask), w.m_dice));
  }
  return loss;
}

}  // namespace contrack
