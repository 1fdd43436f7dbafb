#include "contrack/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

namespace contrack {

double Image::sample(double x, double y) const {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  double acc = 0.0;
  const double wgt[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
  const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
  for (int t = 0; t < 4; ++t)
    if (wgt[t] != 0.0 && in_bounds(ys[t], xs[t])) acc += wgt[t] * at(ys[t], xs[t]);
  return acc;
}

Tensor Image::to_tensor() const {
  return Tensor::from_data({h, w}, px);
}

Image Image::from_tensor(const Tensor& t) {
  if (t.ndim() != 2) throw TensorError("Image::from_tensor: need 2-d tensor");
  Image img(t.dim(1), t.dim(0));
  img.px = t.data();
  return img;
}

void Image::quantize8() {
  for (auto& v : px) {
    v = std::clamp(v, 0.0, 1.0);
    v = std::round(v * 255.0) / 255.0;
  }
}

void write_pgm(const Image& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw TensorError("write_pgm: cannot open " + path);
  f << "P5\n" << img.w << " " << img.h << "\n255\n";
  std::vector<std::uint8_t> bytes(img.px.size());
  for (std::size_t i = 0; i < img.px.size(); ++i)
    bytes[i] = static_cast<std::uint8_t>(
        std::lround(std::clamp(img.px[i], 0.0, 1.0) * 255.0));
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

Image read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw TensorError("read_pgm: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P5") throw TensorError("read_pgm: not a binary PGM: " + path);
  int w = 0, h = 0, maxval = 0;
  f >> w >> h >> maxval;
  if (w <= 0 || h <= 0 || maxval != 255)
    throw TensorError("read_pgm: unsupported header in " + path);
  f.get();  // single whitespace after header
  Image img(w, h);
  std::vector<std::uint8_t> bytes(img.px.size());
  f.read(reinterpret_cast<char*>(bytes.data()),
         static_cast<std::streamsize>(bytes.size()));
  if (!f) throw TensorError("read_pgm: truncated data in " + path);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.px[i] = bytes[i] / 255.0;
  return img;
}

}  // namespace contrack
