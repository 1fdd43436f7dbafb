#pragma once

#include <cstddef>

// Dense numeric kernels. Each kernel has a parallel variant (OpenMP over
// independent output elements, bitwise identical to the serial one) and a
// serial reference variant used by tests and the benchmark target.

namespace contrack::kernels {

// c[m x n] = a[m x k] * b[k x n], row-major.
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_serial(const double* a, const double* b, double* c, int m, int k, int n);

// Cross-correlation, zero padding. x: [C,H,W], w: [Co,C,kh,kw], y: [Co,Ho,Wo].
void conv2d(const double* x, const double* w, const double* bias, double* y,
            int C, int H, int W, int Co, int kh, int kw, int stride, int pad,
            int Ho, int Wo);
void conv2d_serial(const double* x, const double* w, const double* bias, double* y,
                   int C, int H, int W, int Co, int kh, int kw, int stride, int pad,
                   int Ho, int Wo);

// Gradients for conv2d. gx/gw/gb may be null to skip.
void conv2d_backward(const double* x, const double* w, const double* gy,
                     double* gx, double* gw, double* gb,
                     int C, int H, int W, int Co, int kh, int kw, int stride, int pad,
                     int Ho, int Wo);

// Mean over s x s blocks per leading slice. x: [B,H,W] -> y: [B,H/s,W/s].
void avg_pool(const double* x, double* y, int B, int H, int W, int s);
void avg_pool_serial(const double* x, double* y, int B, int H, int W, int s);

}  // namespace contrack::kernels
