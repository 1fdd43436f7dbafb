#include "contrack/kernels.hpp"

#include <cstring>

namespace contrack::kernels {

namespace {

inline void matmul_row(const double* a, const double* b, double* c,
                       int i, int k, int n) {
  double* ci = c + static_cast<std::ptrdiff_t>(i) * n;
  const double* ai = a + static_cast<std::ptrdiff_t>(i) * k;
  for (int j = 0; j < n; ++j) ci[j] = 0.0;
  for (int h = 0; h < k; ++h) {
    const double av = ai[h];
    const double* bh = b + static_cast<std::ptrdiff_t>(h) * n;
    for (int j = 0; j < n; ++j) ci[j] += av * bh[j];
  }
}

inline double conv_cell(const double* x, const double* w, const double* bias,
                        int C, int H, int W, int kh, int kw, int stride, int pad,
                        int co, int oy, int ox) {
  double acc = bias ? bias[co] : 0.0;
  const int iy0 = oy * stride - pad;
  const int ix0 = ox * stride - pad;
  for (int c = 0; c < C; ++c) {
    const double* xc = x + static_cast<std::ptrdiff_t>(c) * H * W;
    const double* wc = w + (static_cast<std::ptrdiff_t>(co) * C + c) * kh * kw;
    for (int ky = 0; ky < kh; ++ky) {
      const int iy = iy0 + ky;
      if (iy < 0 || iy >= H) continue;
      for (int kx = 0; kx < kw; ++kx) {
        const int ix = ix0 + kx;
        if (ix < 0 || ix >= W) continue;
        acc += xc[iy * W + ix] * wc[ky * kw + kx];
      }
    }
  }
  return acc;
}

inline void pool_cell(const double* x, double* y, int H, int W, int s,
                      int b, int oy, int ox) {
  const int Wo = W / s;
  const double* xb = x + static_cast<std::ptrdiff_t>(b) * H * W;
  double acc = 0.0;
  for (int dy = 0; dy < s; ++dy)
    for (int dx = 0; dx < s; ++dx)
      acc += xb[(oy * s + dy) * W + ox * s + dx];
  y[(static_cast<std::ptrdiff_t>(b) * (H / s) + oy) * Wo + ox] = acc / (s * s);
}

}  // namespace

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) matmul_row(a, b, c, i, k, n);
}

void matmul_serial(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) matmul_row(a, b, c, i, k, n);
}

void conv2d(const double* x, const double* w, const double* bias, double* y,
            int C, int H, int W, int Co, int kh, int kw, int stride, int pad,
            int Ho, int Wo) {
#pragma omp parallel for schedule(static)
  for (int co = 0; co < Co; ++co)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox)
        y[(static_cast<std::ptrdiff_t>(co) * Ho + oy) * Wo + ox] =
            conv_cell(x, w, bias, C, H, W, kh, kw, stride, pad, co, oy, ox);
}

void conv2d_serial(const double* x, const double* w, const double* bias, double* y,
                   int C, int H, int W, int Co, int kh, int kw, int stride, int pad,
                   int Ho, int Wo) {
  for (int co = 0; co < Co; ++co)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox)
        y[(static_cast<std::ptrdiff_t>(co) * Ho + oy) * Wo + ox] =
            conv_cell(x, w, bias, C, H, W, kh, kw, stride, pad, co, oy, ox);
}

// Input/weight gradients accumulate across output channels; kept serial so
// two runs are bitwise identical.
void conv2d_backward(const double* x, const double* w, const double* gy,
                     double* gx, double* gw, double* gb,
                     int C, int H, int W, int Co, int kh, int kw, int stride, int pad,
                     int Ho, int Wo) {
  for (int co = 0; co < Co; ++co) {
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        const double g = gy[(static_cast<std::ptrdiff_t>(co) * Ho + oy) * Wo + ox];
        if (gb) gb[co] += g;
        const int iy0 = oy * stride - pad;
        const int ix0 = ox * stride - pad;
        for (int c = 0; c < C; ++c) {
          const double* xc = x + static_cast<std::ptrdiff_t>(c) * H * W;
          const double* wc = w + (static_cast<std::ptrdiff_t>(co) * C + c) * kh * kw;
          double* gxc = gx ? gx + static_cast<std::ptrdiff_t>(c) * H * W : nullptr;
          double* gwc = gw ? gw + (static_cast<std::ptrdiff_t>(co) * C + c) * kh * kw : nullptr;
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ix0 + kx;
              if (ix < 0 || ix >= W) continue;
              if (gxc) gxc[iy * W + ix] += g * wc[ky * kw + kx];
              if (gwc) gwc[ky * kw + kx] += g * xc[iy * W + ix];
            }
          }
        }
      }
    }
  }
}

void avg_pool(const double* x, double* y, int B, int H, int W, int s) {
  const int Ho = H / s, Wo = W / s;
#pragma omp parallel for schedule(static)
  for (int b = 0; b < B; ++b)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) pool_cell(x, y, H, W, s, b, oy, ox);
}

void avg_pool_serial(const double* x, double* y, int B, int H, int W, int s) {
  const int Ho = H / s, Wo = W / s;
  for (int b = 0; b < B; ++b)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) pool_cell(x, y, H, W, s, b, oy, ox);
}

}  // namespace contrack::kernels
