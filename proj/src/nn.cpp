#include "contrack/nn.hpp"

#include <cmath>

namespace contrack::nn {

Tensor* ParamMap::find(const std::string& name) {
  for (auto& [n, t] : items)
    if (n == name) return &t;
  return nullptr;
}

void ParamMap::zero_grad() {
  for (auto& [n, t] : items) {
    auto& g = t.grad();
    std::fill(g.begin(), g.end(), 0.0);
  }
}

namespace {

Tensor xavier(std::vector<int> shape, int fan_in, int fan_out, Rng& rng) {
  const double s = std::sqrt(2.0 / (fan_in + fan_out));
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  std::vector<double> data(n);
  for (auto& v : data) v = rng.normal() * s;
  return Tensor::param(std::move(shape), std::move(data));
}

}  // namespace

Linear::Linear(int in, int out, Rng& rng)
    : w(xavier({in, out}, in, out, rng)),
      b(Tensor::param({out}, std::vector<double>(out, 0.0))) {}

void Linear::collect(const std::string& prefix, ParamMap& pm) const {
  pm.add(prefix + "w", w);
  pm.add(prefix + "b", b);
}

Conv2d::Conv2d(int in, int out, int k, int stride_, int pad_, Rng& rng)
    : w(xavier({out, in, k, k}, in * k * k, out * k * k, rng)),
      b(Tensor::param({out}, std::vector<double>(out, 0.0))),
      stride(stride_),
      pad(pad_) {}

void Conv2d::collect(const std::string& prefix, ParamMap& pm) const {
  pm.add(prefix + "w", w);
  pm.add(prefix + "b", b);
}

LayerNorm::LayerNorm(int d)
    : gamma(Tensor::param({d}, std::vector<double>(d, 1.0))),
      beta(Tensor::param({d}, std::vector<double>(d, 0.0))) {}

void LayerNorm::collect(const std::string& prefix, ParamMap& pm) const {
  pm.add(prefix + "gamma", gamma);
  pm.add(prefix + "beta", beta);
}

MultiHeadAttention::MultiHeadAttention(int d, int heads_, Rng& rng)
    : wq(d, d, rng), wk(d, d, rng), wv(d, d, rng), wo(d, d, rng),
      heads(heads_), d_model(d) {
  if (d % heads_ != 0) throw TensorError("attention: d_model not divisible by heads");
}

Tensor MultiHeadAttention::forward(const Tensor& q_in, const Tensor& kv_in,
                                   std::vector<Tensor>* attn_out) const {
  const int hd = d_model / heads;
  Tensor q = wq.forward(q_in);
  Tensor k = wk.forward(kv_in);
  Tensor v = wv.forward(kv_in);
  std::vector<Tensor> head_outs;
  head_outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = narrow(q, 1, h * hd, hd);
    Tensor kh = narrow(k, 1, h * hd, hd);
    Tensor vh = narrow(v, 1, h * hd, hd);
    Tensor logits = mul_scalar(matmul(qh, transpose2d(kh)), 1.0 / std::sqrt(hd));
    Tensor weights = softmax_rows(logits);
    if (attn_out) attn_out->push_back(weights);
    head_outs.push_back(matmul(weights, vh));
  }
  Tensor merged = heads == 1 ? head_outs[0] : concat(head_outs, 1);
  return wo.forward(merged);
}

void MultiHeadAttention::collect(const std::string& prefix, ParamMap& pm) const {
  wq.collect(prefix + "wq.", pm);
  wk.collect(prefix + "wk.", pm);
  wv.collect(prefix + "wv.", pm);
  wo.collect(prefix + "wo.", pm);
}

EncoderLayer::EncoderLayer(int d, int heads, int d_ff, Rng& rng)
    : attn(d, heads, rng), ff1(d, d_ff, rng), ff2(d_ff, d, rng), ln1(d), ln2(d) {}

Tensor EncoderLayer::forward(const Tensor& tokens,
                             std::vector<Tensor>* attn_out) const {
  Tensor a = ln1.forward(add(tokens, attn.forward(tokens, tokens, attn_out)));
  Tensor f = ff2.forward(relu(ff1.forward(a)));
  return ln2.forward(add(a, f));
}

void EncoderLayer::collect(const std::string& prefix, ParamMap& pm) const {
  attn.collect(prefix + "attn.", pm);
  ff1.collect(prefix + "ff1.", pm);
  ff2.collect(prefix + "ff2.", pm);
  ln1.collect(prefix + "ln1.", pm);
  ln2.collect(prefix + "ln2.", pm);
}

DecoderLayer::DecoderLayer(int d, int heads, int d_ff, Rng& rng)
    : self_attn(d, heads, rng), cross_attn(d, heads, rng),
      ff1(d, d_ff, rng), ff2(d_ff, d, rng), ln1(d), ln2(d), ln3(d) {}

Tensor DecoderLayer::forward(const Tensor& queries, const Tensor& memory) const {
  Tensor a = ln1.forward(add(queries, self_attn.forward(queries, queries)));
  Tensor c = ln2.forward(add(a, cross_attn.forward(a, memory)));
  Tensor f = ff2.forward(relu(ff1.forward(c)));
  return ln3.forward(add(c, f));
}

void DecoderLayer::collect(const std::string& prefix, ParamMap& pm) const {
  self_attn.collect(prefix + "self.", pm);
  cross_attn.collect(prefix + "cross.", pm);
  ff1.collect(prefix + "ff1.", pm);
  ff2.collect(prefix + "ff2.", pm);
  ln1.collect(prefix + "ln1.", pm);
  ln2.collect(prefix + "ln2.", pm);
  ln3.collect(prefix + "ln3.", pm);
}

Tensor bce_loss(const Tensor& pred, const Tensor& target, double eps) {
  Tensor p = pred;
  Tensor t = target;
  Tensor pos = mul(t, log(add_scalar(p, eps)));
  Tensor one_minus_t = add_scalar(mul_scalar(t, -1.0), 1.0);
  Tensor one_minus_p = add_scalar(mul_scalar(p, -1.0), 1.0 + eps);
  Tensor neg = mul(one_minus_t, log(one_minus_p));
  return mul_scalar(mean(add(pos, neg)), -1.0);
}

Tensor dice_loss(const Tensor& pred, const Tensor& target, double eps) {
  Tensor inter = sum(mul(pred, target));
  Tensor denom = add(sum(pred), sum(target));
  Tensor dice = div(add_scalar(mul_scalar(inter, 2.0), eps), add_scalar(denom, eps));
  return add_scalar(mul_scalar(dice, -1.0), 1.0);
}

Tensor gaussian_heatmap(int h, int w, double u, double v, double sigma) {
  std::vector<double> data(static_cast<std::size_t>(h) * w, 0.0);
  const double s2 = sigma * sigma;
  const double cutoff = 9.0 * s2;  // truncate at 3*sigma, no renormalization
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double d2 = (x - u) * (x - u) + (y - v) * (y - v);
      if (d2 <= cutoff) data[static_cast<std::size_t>(y) * w + x] = std::exp(-d2 / s2);
    }
  return Tensor::from_data({h, w}, std::move(data));
}

SoftArgmax soft_argmax(const Tensor& heatmap, int radius) {
  if (heatmap.ndim() != 2) throw TensorError("soft_argmax: need 2-d map");
  const int h = heatmap.dim(0), w = heatmap.dim(1);
  const auto& d = heatmap.data();
  int best = 0;
  for (int i = 1; i < h * w; ++i)
    if (d[i] > d[best]) best = i;
  SoftArgmax out;
  out.confidence = d[best];
  if (d[best] <= 0.0) {
    out.u = (w - 1) / 2.0;
    out.v = (h - 1) / 2.0;
    out.confidence = 0.0;
    out.degenerate = true;
    return out;
  }
  const int by = best / w, bx = best % w;
  double wsum = 0.0, usum = 0.0, vsum = 0.0;
  for (int y = std::max(0, by - radius); y <= std::min(h - 1, by + radius); ++y)
    for (int x = std::max(0, bx - radius); x <= std::min(w - 1, bx + radius); ++x) {
      const double val = std::max(0.0, d[static_cast<std::size_t>(y) * w + x]);
      wsum += val;
      usum += val * x;
      vsum += val * y;
    }
  out.u = usum / wsum;
  out.v = vsum / wsum;
  return out;
}

}  // namespace contrack::nn
