#pragma once

#include <string>
#include <utility>
#include <vector>

#include "contrack/tensor.hpp"

namespace contrack::nn {

// Named handles to learnable tensors; shared with the optimizer and the
// checkpoint writer.
struct ParamMap {
  std::vector<std::pair<std::string, Tensor>> items;

  void add(const std::string& name, const Tensor& t) { items.emplace_back(name, t); }
  void merge(const std::string& prefix, const ParamMap& other) {
    for (const auto& [name, t] : other.items) items.emplace_back(prefix + name, t);
  }
  Tensor* find(const std::string& name);
  void zero_grad();
};

struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [out]

  Linear() = default;
  Linear(int in, int out, Rng& rng);
  Tensor forward(const Tensor& x) const { return add_row(matmul(x, w), b); }
  void collect(const std::string& prefix, ParamMap& pm) const;
};

struct Conv2d {
  Tensor w;  // [out, in, k, k]
  Tensor b;  // [out]
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(int in, int out, int k, int stride, int pad, Rng& rng);
  Tensor forward(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
  void collect(const std::string& prefix, ParamMap& pm) const;
};

struct LayerNorm {
  Tensor gamma, beta;

  LayerNorm() = default;
  explicit LayerNorm(int d);
  Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, ParamMap& pm) const;
};

// Scaled dot-product multi-head attention over concatenated token rows.
struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  int heads = 1;
  int d_model = 0;

  MultiHeadAttention() = default;
  MultiHeadAttention(int d, int heads, Rng& rng);
  // q_in: [Lq, d], kv_in: [Lk, d]. If attn_out is non-null, receives the
  // per-head [Lq, Lk] attention weight matrices.
  Tensor forward(const Tensor& q_in, const Tensor& kv_in,
                 std::vector<Tensor>* attn_out = nullptr) const;
  void collect(const std::string& prefix, ParamMap& pm) const;
};

// Post-norm transformer encoder layer: self-attention + feed-forward.
struct EncoderLayer {
  MultiHeadAttention attn;
  Linear ff1, ff2;
  LayerNorm ln1, ln2;

  EncoderLayer() = default;
  EncoderLayer(int d, int heads, int d_ff, Rng& rng);
  Tensor forward(const Tensor& tokens, std::vector<Tensor>* attn_out = nullptr) const;
  void collect(const std::string& prefix, ParamMap& pm) const;
};

// Decoder layer: query self-attention, cross-attention to memory, feed-forward.
struct DecoderLayer {
  MultiHeadAttention self_attn, cross_attn;
  Linear ff1, ff2;
  LayerNorm ln1, ln2, ln3;

  DecoderLayer() = default;
  DecoderLayer(int d, int heads, int d_ff, Rng& rng);
  Tensor forward(const Tensor& queries, const Tensor& memory) const;
  void collect(const std::string& prefix, ParamMap& pm) const;
};

// --- losses ---
Tensor bce_loss(const Tensor& pred, const Tensor& target, double eps = 1e-12);
Tensor dice_loss(const Tensor& pred, const Tensor& target, double eps = 1e-6);

// Truncated, unnormalized Gaussian heatmap: exp(-((x-u)^2+(y-v)^2)/sigma^2),
// zero beyond 3*sigma, peak 1 at the target point.
Tensor gaussian_heatmap(int h, int w, double u, double v, double sigma);

struct SoftArgmax {
  double u = 0.0, v = 0.0;
  double confidence = 0.0;
  bool degenerate = false;  // all-zero map
};

// Intensity-weighted centroid within a radius-5 window around the hard
// argmax (row-major first on ties).
SoftArgmax soft_argmax(const Tensor& heatmap, int radius = 5);

}  // namespace contrack::nn
