// Timing comparison between the OpenMP kernels and their serial reference
// implementations, plus a bitwise equality check on every measured case.
#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "contrack/kernels.hpp"
#include "contrack/tensor.hpp"

using namespace contrack;
using clock_t_ = std::chrono::steady_clock;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm-up
  const auto t0 = clock_t_::now();
  for (int i = 0; i < reps; ++i) fn();
  return std::chrono::duration<double, std::milli>(clock_t_::now() - t0).count() /
         reps;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

int main() {
  Rng rng(42);
  int mismatches = 0;
  std::printf("%-28s %10s %10s %8s\n", "kernel", "serial ms", "openmp ms", "speedup");

  auto report = [&](const char* name, double ts, double tp, bool same) {
    std::printf("%-28s %10.3f %10.3f %7.2fx%s\n", name, ts, tp, ts / tp,
                same ? "" : "  MISMATCH");
    if (!same) ++mismatches;
  };

  for (int n : {64, 128, 256}) {
    std::vector<double> a(static_cast<std::size_t>(n) * n), b(a), c1(a), c2(a);
    for (auto& v : a) v = rng.uniform(-1, 1);
    for (auto& v : b) v = rng.uniform(-1, 1);
    const double ts = time_ms([&] { kernels::matmul_serial(a.data(), b.data(), c1.data(), n, n, n); }, 5);
    const double tp = time_ms([&] { kernels::matmul(a.data(), b.data(), c2.data(), n, n, n); }, 5);
    char name[64];
    std::snprintf(name, sizeof(name), "matmul %dx%dx%d", n, n, n);
    report(name, ts, tp, bitwise_equal(c1, c2));
  }

  {
    const int C = 16, H = 96, W = 96, Co = 16, k = 3, pad = 1;
    std::vector<double> x(static_cast<std::size_t>(C) * H * W);
    std::vector<double> w(static_cast<std::size_t>(Co) * C * k * k);
    std::vector<double> bias(Co);
    std::vector<double> y1(static_cast<std::size_t>(Co) * H * W), y2(y1);
    for (auto& v : x) v = rng.uniform(-1, 1);
    for (auto& v : w) v = rng.uniform(-1, 1);
    for (auto& v : bias) v = rng.uniform(-1, 1);
    const double ts = time_ms([&] {
      kernels::conv2d_serial(x.data(), w.data(), bias.data(), y1.data(), C, H, W,
                             Co, k, k, 1, pad, H, W);
    }, 3);
    const double tp = time_ms([&] {
      kernels::conv2d(x.data(), w.data(), bias.data(), y2.data(), C, H, W, Co, k,
                      k, 1, pad, H, W);
    }, 3);
    report("conv2d 16x96x96 k3", ts, tp, bitwise_equal(y1, y2));
  }

  {
    const int B = 256, H = 64, W = 64, s = 2;
    std::vector<double> x(static_cast<std::size_t>(B) * H * W);
    std::vector<double> y1(static_cast<std::size_t>(B) * (H / s) * (W / s)), y2(y1);
    for (auto& v : x) v = rng.uniform(-1, 1);
    const double ts = time_ms([&] { kernels::avg_pool_serial(x.data(), y1.data(), B, H, W, s); }, 10);
    const double tp = time_ms([&] { kernels::avg_pool(x.data(), y2.data(), B, H, W, s); }, 10);
    report("avg_pool 256x64x64 s2", ts, tp, bitwise_equal(y1, y2));
  }

  if (mismatches) {
    std::printf("%d kernel(s) diverged from the serial reference\n", mismatches);
    return 1;
  }
  return 0;
}
