#pragma once

#include <string>
#include <vector>

#include "contrack/tensor.hpp"

namespace contrack {

// Grayscale image, intensities in [0,1], row-major.
struct Image {
  int w = 0;
  int h = 0;
  std::vector<double> px;

  Image() = default;
  Image(int w_, int h_, double fill = 0.0)
      : w(w_), h(h_), px(static_cast<std::size_t>(w_) * h_, fill) {}

  double& at(int y, int x) { return px[static_cast<std::size_t>(y) * w + x]; }
  double at(int y, int x) const { return px[static_cast<std::size_t>(y) * w + x]; }
  bool in_bounds(int y, int x) const { return y >= 0 && y < h && x >= 0 && x < w; }

  // Bilinear sample at subpixel (x,y); zero outside.
  double sample(double x, double y) const;

  Tensor to_tensor() const;                 // [h,w]
  static Image from_tensor(const Tensor& t);

  // Snap every intensity to the nearest 8-bit level so PGM round trips are
  // bit exact.
  void quantize8();
};

void write_pgm(const Image& img, const std::string& path);
Image read_pgm(const std::string& path);

}  // namespace contrack
