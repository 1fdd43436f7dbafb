#pragma once

// Independent reference implementations used as test oracles. These stay
// deliberately naive (plain loops, direct formulas) and must not call into
// the kernels they check.

#include <cmath>
#include <functional>
#include <vector>

#include "contrack/tensor.hpp"

namespace oracle {

inline std::vector<double> matmul(const std::vector<double>& a,
                                  const std::vector<double>& b, int m, int k, int n) {
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int h = 0; h < k; ++h) c[i * n + j] += a[i * k + h] * b[h * n + j];
  return c;
}

inline std::vector<double> softmax_rows(const std::vector<double>& x, int r, int c) {
  std::vector<double> y(x.size());
  for (int i = 0; i < r; ++i) {
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(x[i * c + j]);
    for (int j = 0; j < c; ++j) y[i * c + j] = std::exp(x[i * c + j]) / z;
  }
  return y;
}

inline std::vector<double> conv2d(const std::vector<double>& x,
                                  const std::vector<double>& w,
                                  const std::vector<double>& bias, int C, int H,
                                  int W, int Co, int kh, int kw, int stride,
                                  int pad) {
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  std::vector<double> y(static_cast<std::size_t>(Co) * Ho * Wo, 0.0);
  for (int co = 0; co < Co; ++co)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        double acc = bias.empty() ? 0.0 : bias[co];
        for (int c = 0; c < C; ++c)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const int iy = oy * stride - pad + ky;
              const int ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              acc += x[(c * H + iy) * W + ix] * w[((co * C + c) * kh + ky) * kw + kx];
            }
        y[(co * Ho + oy) * Wo + ox] = acc;
      }
  return y;
}

inline std::vector<double> avg_pool(const std::vector<double>& x, int B, int H,
                                    int W, int s) {
  const int Ho = H / s, Wo = W / s;
  std::vector<double> y(static_cast<std::size_t>(B) * Ho * Wo, 0.0);
  for (int b = 0; b < B; ++b)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        double acc = 0.0;
        for (int dy = 0; dy < s; ++dy)
          for (int dx = 0; dx < s; ++dx)
            acc += x[(b * H + oy * s + dy) * W + ox * s + dx];
        y[(b * Ho + oy) * Wo + ox] = acc / (s * s);
      }
  return y;
}

// Eq.-style 4-d correlation: corr[i][j][k][l] = sum_h a[ijh] * b[klh],
// features given as [D,H,W] (channel-major), indexing matches the pyramid's
// flattened [H*W, H, W] level 0.
inline std::vector<double> correlation(const std::vector<double>& a,
                                       const std::vector<double>& b, int d,
                                       int h, int w, bool scale) {
  const int hw = h * w;
  std::vector<double> c(static_cast<std::size_t>(hw) * hw, 0.0);
  for (int p = 0; p < hw; ++p)
    for (int q = 0; q < hw; ++q) {
      double acc = 0.0;
      for (int ch = 0; ch < d; ++ch) acc += a[ch * hw + p] * b[ch * hw + q];
      c[static_cast<std::size_t>(p) * hw + q] = scale ? acc / std::sqrt(double(d)) : acc;
    }
  return c;
}

// Central finite-difference gradient check over every parameter handle.
// forward() must rebuild the full graph from current parameter values.
struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
};

inline GradCheckResult grad_check(const std::function<contrack::Tensor()>& forward,
                                  std::vector<contrack::Tensor> params,
                                  double h = 1e-5) {
  using namespace contrack;
  for (auto& p : params) {
    auto& g = p.grad();
    std::fill(g.begin(), g.end(), 0.0);
  }
  {
    GradTape tape;
    Tensor loss = forward();
    tape.backward(loss);
  }
  GradCheckResult res;
  for (auto& p : params) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p.data()[i];
      p.data()[i] = orig + h;
      const double fp = forward().item();
      p.data()[i] = orig - h;
      const double fm = forward().item();
      p.data()[i] = orig;
      const double num = (fp - fm) / (2.0 * h);
      const double ana = p.grad()[i];
      const double abs_err = std::abs(num - ana);
      const double denom = std::max({std::abs(num), std::abs(ana), 1e-3});
      res.max_abs_err = std::max(res.max_abs_err, abs_err);
      res.max_rel_err = std::max(res.max_rel_err, abs_err / denom);
    }
  }
  return res;
}

}  // namespace oracle
