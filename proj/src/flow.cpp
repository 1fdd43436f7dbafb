#include "contrack/flow.hpp"

#include <algorithm>
#include <cmath>

namespace contrack {

FlowFeatureEncoder::FlowFeatureEncoder(int feat_dim, Rng& rng) {
  const int mid = std::max(8, feat_dim / 2);
  auto make_block = [&](int in, int out, int stride) {
    ResBlock b;
    b.c1 = nn::Conv2d(in, out, 3, stride, 1, rng);
    b.c2 = nn::Conv2d(out, out, 3, 1, 1, rng);
    if (stride != 1 || in != out) {
      b.skip = nn::Conv2d(in, out, 1, stride, 0, rng);
      b.has_skip = true;
    }
    return b;
  };
  blocks.push_back(make_block(1, mid, 2));
  blocks.push_back(make_block(mid, mid, 1));
  blocks.push_back(make_block(mid, mid, 1));
  blocks.push_back(make_block(mid, feat_dim, 2));
  blocks.push_back(make_block(feat_dim, feat_dim, 1));
  blocks.push_back(make_block(feat_dim, feat_dim, 1));
}

Tensor FlowFeatureEncoder::forward(const Tensor& mask) const {
  if (mask.ndim() != 2) throw TensorError("flow encode: need 2-d mask");
  Tensor x = reshape(mask, {1, mask.dim(0), mask.dim(1)});
  for (const auto& b : blocks) {
    Tensor y = b.c2.forward(relu(b.c1.forward(x)));
    Tensor s = b.has_skip ? b.skip.forward(x) : x;
    x = relu(add(y, s));
  }
  // L2-normalize each spatial location so correlations become cosine
  // similarities with a unit self-match: a far stronger matching signal than
  // raw inner products of sparse activations.
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor flat = reshape(x, {c, h * w});
  Tensor norm2 = matmul(Tensor::full({1, c}, 1.0), mul(flat, flat));  // [1,HW]
  Tensor inv = exp(mul_scalar(log(add_scalar(norm2, 1e-8)), -0.5));
  Tensor scaled = transpose2d(scale_rows(transpose2d(flat), flatten(inv)));
  return reshape(scaled, {c, h, w});
}

void FlowFeatureEncoder::collect(const std::string& prefix, nn::ParamMap& pm) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = prefix + "block" + std::to_string(i) + ".";
    blocks[i].c1.collect(p + "c1.", pm);
    blocks[i].c2.collect(p + "c2.", pm);
    if (blocks[i].has_skip) blocks[i].skip.collect(p + "skip.", pm);
  }
}

CorrelationPyramid correlation_volume(const Tensor& feat_a, const Tensor& feat_b,
                                      bool scale_by_sqrt_df) {
  if (feat_a.ndim() != 3 || feat_a.shape() != feat_b.shape())
    throw TensorError("correlation_volume: feature shape mismatch");
  const int d = feat_a.dim(0), h = feat_a.dim(1), w = feat_a.dim(2);
  const int hw = h * w;
  // corr[ij][kl] = sum_h a[ij h] b[kl h], as (HW x D) * (D x HW).
  Tensor a = transpose2d(reshape(feat_a, {d, hw}));  // [HW, D]
  Tensor b = reshape(feat_b, {d, hw});               // [D, HW]
  Tensor c0 = matmul(a, b);
  if (scale_by_sqrt_df) c0 = mul_scalar(c0, 1.0 / std::sqrt(static_cast<double>(d)));
  CorrelationPyramid pyr;
  pyr.h = h;
  pyr.w = w;
  Tensor level = reshape(c0, {hw, h, w});
  pyr.levels.push_back(level);
  for (int i = 1; i < 4; ++i) {
    level = avg_pool(level, 2);
    pyr.levels.push_back(level);
  }
  return pyr;
}

Tensor lookup(const CorrelationPyramid& pyr, const Tensor& flow, int radius) {
  if (flow.ndim() != 3 || flow.dim(0) != 2 || flow.dim(1) != pyr.h || flow.dim(2) != pyr.w)
    throw TensorError("lookup: flow must be [2,H,W] at feature resolution");
  const int h = pyr.h, w = pyr.w, hw = h * w;
  const int win = 2 * radius + 1;
  const int per_level = win * win;
  const int n_levels = static_cast<int>(pyr.levels.size());
  const std::size_t npix = static_cast<std::size_t>(hw);
  std::vector<double> out(static_cast<std::size_t>(n_levels) * per_level * npix, 0.0);

  // Tap list per (level, offset, pixel): reused verbatim in the backward pass.
  struct Tap {
    std::size_t out_idx;
    std::size_t level_idx;
    double weight;
  };
  auto taps = std::make_shared<std::vector<std::vector<Tap>>>(n_levels);

  const double* du = flow.data().data();
  const double* dv = flow.data().data() + npix;
  for (int li = 0; li < n_levels; ++li) {
    const Tensor& lvl = pyr.levels[li];
    const int lh = lvl.dim(1), lw = lvl.dim(2);
    const double scale = 1.0 / static_cast<double>(1 << li);
    auto& tv = (*taps)[li];
    for (int p = 0; p < hw; ++p) {
      const int py = p / w, px = p % w;
      // Centered pooled-cell convention: pixel q maps to (q+0.5)*scale-0.5.
      const double cx = (px + du[p] + 0.5) * scale - 0.5;
      const double cy = (py + dv[p] + 0.5) * scale - 0.5;
      for (int oy = -radius; oy <= radius; ++oy)
        for (int ox = -radius; ox <= radius; ++ox) {
          const double sx = cx + ox, sy = cy + oy;
          const int x0 = static_cast<int>(std::floor(sx));
          const int y0 = static_cast<int>(std::floor(sy));
          const double fx = sx - x0, fy = sy - y0;
          const std::size_t out_idx =
              ((static_cast<std::size_t>(li) * per_level +
                static_cast<std::size_t>(oy + radius) * win + (ox + radius)) *
               npix) +
              static_cast<std::size_t>(p);
          const double wts[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx,
                                 fy * (1 - fx), fy * fx};
          const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
          const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
          for (int t = 0; t < 4; ++t) {
            if (wts[t] == 0.0 || ys[t] < 0 || ys[t] >= lh || xs[t] < 0 || xs[t] >= lw)
              continue;
            const std::size_t lidx =
                (static_cast<std::size_t>(p) * lh + ys[t]) * lw + xs[t];
            out[out_idx] += wts[t] * lvl.data()[lidx];
            tv.push_back({out_idx, lidx, wts[t]});
          }
        }
    }
  }
  std::vector<Tensor> inputs(pyr.levels.begin(), pyr.levels.end());
  std::vector<NodePtr> level_nodes;
  for (const auto& l : pyr.levels) level_nodes.push_back(l.node_ptr());
  return custom_op("corr_lookup", {n_levels * per_level, h, w}, std::move(out),
                   std::move(inputs), [taps, level_nodes](TensorNode& n) {
                     for (std::size_t li = 0; li < level_nodes.size(); ++li) {
                       if (!level_nodes[li]->requires_grad) continue;
                       for (const Tap& t : (*taps)[li])
                         level_nodes[li]->grad[t.level_idx] +=
                             t.weight * n.grad[t.out_idx];
                     }
                   });
}

ConvGru::ConvGru(int hidden_dim, int input_dim, Rng& rng)
    : wz(hidden_dim + input_dim, hidden_dim, 3, 1, 1, rng),
      wr(hidden_dim + input_dim, hidden_dim, 3, 1, 1, rng),
      wh(hidden_dim + input_dim, hidden_dim, 3, 1, 1, rng),
      hidden(hidden_dim) {}

Tensor ConvGru::step(const Tensor& h, const Tensor& x) const {
  Tensor hx = concat({h, x}, 0);
  Tensor z = sigmoid(wz.forward(hx));
  Tensor r = sigmoid(wr.forward(hx));
  Tensor h_cand = tanh(wh.forward(concat({mul(r, h), x}, 0)));
  Tensor one_minus_z = add_scalar(mul_scalar(z, -1.0), 1.0);
  return add(mul(one_minus_z, h), mul(z, h_cand));
}

void ConvGru::collect(const std::string& prefix, nn::ParamMap& pm) const {
  wz.collect(prefix + "wz.", pm);
  wr.collect(prefix + "wr.", pm);
  wh.collect(prefix + "wh.", pm);
}

FlowEstimator::FlowEstimator(const FlowConfig& cfg, Rng& rng)
    : cfg_(cfg),
      encoder_(cfg.feat_dim, rng),
      motion_conv_(4 * ((2 * cfg.lookup_radius + 1) * (2 * cfg.lookup_radius + 1) + 2),
                   cfg.motion_dim, 1, 1, 0, rng),
      gru_(cfg.hidden_dim, cfg.motion_dim + 2, rng),
      delta1_(cfg.hidden_dim + cfg.motion_dim, cfg.hidden_dim, 3, 1, 1, rng),
      delta2_(cfg.hidden_dim, 2, 3, 1, 1, rng) {
  // Zero-initialized delta head: the first refinement pass starts from an
  // exact zero flow instead of backbone noise.
  for (auto& v : delta2_.w.data()) v = 0.0;
  for (auto& v : delta2_.b.data()) v = 0.0;
}

Tensor FlowEstimator::refine_flow(const Tensor& feat_a, const Tensor& feat_b,
                                  int iters) const {
  if (iters < 1) throw TensorError("refine_flow: iters must be >= 1");
  CorrelationPyramid pyr = correlation_volume(feat_a, feat_b, cfg_.scale_by_sqrt_df);
  const int h = pyr.h, w = pyr.w;
  Tensor flow = Tensor::zeros({2, h, w});  // f_0 = 0
  Tensor hidden = Tensor::zeros({cfg_.hidden_dim, h, w});
  const int r = cfg_.lookup_radius;
  const int win = (2 * r + 1) * (2 * r + 1);
  // Constant tap-offset matrix [(2r+1)^2, 2]: (du, dv) of each window tap.
  std::vector<double> offsets(static_cast<std::size_t>(win) * 2);
  for (int dv = -r, i = 0; dv <= r; ++dv)
    for (int du = -r; du <= r; ++du, ++i) {
      offsets[static_cast<std::size_t>(i) * 2] = du;
      offsets[static_cast<std::size_t>(i) * 2 + 1] = dv;
    }
  const Tensor tap_offsets = Tensor::from_data({win, 2}, std::move(offsets));
  for (int k = 0; k < iters; ++k) {
    Tensor corr_feats = lookup(pyr, flow.detach(), cfg_.lookup_radius);
    // Closed-form displacement readout per level: a temperature-sharpened
    // soft argmax over the correlation window. This hands the update head an
    // explicit motion estimate wherever matching is unambiguous instead of
    // making it rediscover the comparison from raw taps.
    std::vector<Tensor> motion_in{corr_feats};
    for (std::size_t l = 0; l < pyr.levels.size(); ++l) {
      Tensor taps = narrow(corr_feats, 0, static_cast<int>(l) * win, win);
      Tensor rows = transpose2d(reshape(taps, {win, h * w}));  // [HW, win]
      Tensor soft = softmax_rows(mul_scalar(rows, 10.0));
      Tensor disp = matmul(soft, tap_offsets);                 // [HW, 2]
      // Tap units at level l are 2^l feature pixels.
      disp = mul_scalar(disp, static_cast<double>(1 << l));
      motion_in.push_back(reshape(transpose2d(disp), {2, h, w}));
    }
    Tensor motion = relu(motion_conv_.forward(concat(motion_in, 0)));
    Tensor x = concat({motion, flow}, 0);
    hidden = gru_.step(hidden, x);
    // The delta head reads both the recurrent state and the fresh motion
    // features; the direct correlation path speeds up learning considerably.
    Tensor delta = delta2_.forward(relu(delta1_.forward(concat({hidden, motion}, 0))));
    flow = add(flow, delta);  // f_k = f_{k-1} + delta
  }
  return flow;
}

Tensor FlowEstimator::flow_between(const Tensor& mask_prev, const Tensor& mask_cur) const {
  // Computation is restricted to the joint bounding crop of both masks; the
  // result is the crop flow pasted into a zero field, so the crop is purely a
  // cost optimization over regions that carry no mask energy.
  const int H = mask_prev.dim(0), W = mask_prev.dim(1);
  const CropRegion c =
      crop_for_flow(mask_prev, mask_cur, cfg_.crop_margin, 2 * cfg_.stride);
  Tensor fa = encode(crop_tensor(mask_prev, c));
  Tensor fb = encode(crop_tensor(mask_cur, c));
  Tensor local = upsample_flow(refine_flow(fa, fb), cfg_.stride);
  if (c.whole_image) return local;
  Tensor mid = local;
  if (c.x0 > 0) mid = concat({Tensor::zeros({2, c.h, c.x0}), mid}, 2);
  if (c.x0 + c.w < W) mid = concat({mid, Tensor::zeros({2, c.h, W - c.x0 - c.w})}, 2);
  if (c.y0 > 0) mid = concat({Tensor::zeros({2, c.y0, W}), mid}, 1);
  if (c.y0 + c.h < H) mid = concat({mid, Tensor::zeros({2, H - c.y0 - c.h, W})}, 1);
  return mid;
}

nn::ParamMap FlowEstimator::params() const {
  nn::ParamMap pm;
  encoder_.collect("enc.", pm);
  motion_conv_.collect("motion.", pm);
  gru_.collect("gru.", pm);
  delta1_.collect("delta1.", pm);
  delta2_.collect("delta2.", pm);
  return pm;
}

Tensor upsample_flow(const Tensor& flow, int stride) {
  if (stride == 1) return flow;
  return mul_scalar(upsample_bilinear(flow, stride), static_cast<double>(stride));
}

WarpedTip warp_point(const Vec2& prev_tip, const Tensor& flow_full_res, double sigma) {
  if (flow_full_res.ndim() != 3 || flow_full_res.dim(0) != 2)
    throw TensorError("warp_point: flow must be [2,H,W]");
  const int h = flow_full_res.dim(1), w = flow_full_res.dim(2);
  if (prev_tip.u < 0 || prev_tip.u > w - 1 || prev_tip.v < 0 || prev_tip.v > h - 1)
    throw TensorError("warp_point: previous tip outside image");
  const std::size_t n = static_cast<std::size_t>(h) * w;
  auto sample = [&](const double* ch) {
    const int x0 = std::clamp(static_cast<int>(std::floor(prev_tip.u)), 0, w - 2);
    const int y0 = std::clamp(static_cast<int>(std::floor(prev_tip.v)), 0, h - 2);
    const double fx = std::clamp(prev_tip.u - x0, 0.0, 1.0);
    const double fy = std::clamp(prev_tip.v - y0, 0.0, 1.0);
    return (1 - fy) * ((1 - fx) * ch[y0 * w + x0] + fx * ch[y0 * w + x0 + 1]) +
           fy * ((1 - fx) * ch[(y0 + 1) * w + x0] + fx * ch[(y0 + 1) * w + x0 + 1]);
  };
  WarpedTip out;
  out.point = {prev_tip.u + sample(flow_full_res.data().data()),
               prev_tip.v + sample(flow_full_res.data().data() + n)};
  const double cu = std::clamp(out.point.u, 0.0, static_cast<double>(w - 1));
  const double cv = std::clamp(out.point.v, 0.0, static_cast<double>(h - 1));
  out.clamped = (cu != out.point.u) || (cv != out.point.v);
  out.point = {cu, cv};
  out.heatmap = nn::gaussian_heatmap(h, w, out.point.u, out.point.v, sigma);
  return out;
}

CropRegion crop_for_flow(const Tensor& mask_prev, const Tensor& mask_cur,
                         int margin, int stride) {
  if (mask_prev.shape() != mask_cur.shape() || mask_prev.ndim() != 2)
    throw TensorError("crop_for_flow: masks must be 2-d and the same size");
  const int h = mask_prev.dim(0), w = mask_prev.dim(1);
  int x0 = w, y0 = h, x1 = -1, y1 = -1;
  auto scan = [&](const Tensor& m) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (m.data()[static_cast<std::size_t>(y) * w + x] > 0.5) {
          x0 = std::min(x0, x);
          y0 = std::min(y0, y);
          x1 = std::max(x1, x);
          y1 = std::max(y1, y);
        }
  };
  scan(mask_prev);
  scan(mask_cur);
  CropRegion c;
  if (x1 < 0) {
    c = {0, 0, w, h, true};
    return c;
  }
  x0 = std::max(0, x0 - margin);
  y0 = std::max(0, y0 - margin);
  x1 = std::min(w - 1, x1 + margin);
  y1 = std::min(h - 1, y1 + margin);
  // Snap the origin down and the extent up to stride multiples.
  c.x0 = (x0 / stride) * stride;
  c.y0 = (y0 / stride) * stride;
  int cw = ((x1 - c.x0) / stride + 1) * stride;
  int ch = ((y1 - c.y0) / stride + 1) * stride;
  cw = std::min(cw, w - c.x0);
  ch = std::min(ch, h - c.y0);
  cw = (cw / stride) * stride;
  ch = (ch / stride) * stride;
  if (cw <= 0 || ch <= 0) return CropRegion{0, 0, w, h, true};
  c.w = cw;
  c.h = ch;
  c.whole_image = (c.x0 == 0 && c.y0 == 0 && c.w == w && c.h == h);
  return c;
}

Tensor crop_tensor(const Tensor& map, const CropRegion& c) {
  if (map.ndim() != 2) throw TensorError("crop_tensor: need 2-d map");
  return narrow(narrow(map, 0, c.y0, c.h), 1, c.x0, c.w);
}

Tensor flow_loss(const Tensor& pred_flow, const Tensor& gt_flow, const Tensor& mask) {
  if (pred_flow.shape() != gt_flow.shape())
    throw TensorError("flow_loss: flow shape mismatch");
  const int h = pred_flow.dim(1), w = pred_flow.dim(2);
  if (mask.ndim() != 2 || mask.dim(0) != h || mask.dim(1) != w)
    throw TensorError("flow_loss: mask shape mismatch");
  // Weight map over both channels; L1 averaged over mask-positive pixels.
  std::vector<double> wt(2 * static_cast<std::size_t>(h) * w, 0.0);
  double count = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask.data()[i] > 0.5) {
      wt[i] = 1.0;
      wt[mask.size() + i] = 1.0;
      count += 1.0;
    }
  if (count == 0.0) count = 1.0;
  Tensor wt_t = Tensor::from_data({2, h, w}, std::move(wt));
  Tensor diff = abs(sub(pred_flow, gt_flow));
  return mul_scalar(sum(mul(diff, wt_t)), 1.0 / (2.0 * count));
}

}  // namespace contrack
