#include "contrack/synthcath.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace contrack {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct Curve {
  std::vector<Vec2> ctrl;
};

Vec2 catmull_rom(const Vec2& p0, const Vec2& p1, const Vec2& p2, const Vec2& p3,
                 double t) {
  const double t2 = t * t, t3 = t2 * t;
  auto blend = [&](double a, double b, double c, double d) {
    return 0.5 * ((2.0 * b) + (-a + c) * t + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2 +
                  (-a + 3.0 * b - 3.0 * c + d) * t3);
  };
  return {blend(p0.u, p1.u, p2.u, p3.u), blend(p0.v, p1.v, p2.v, p3.v)};
}

// Dense samples along a Catmull-Rom spline through the control points,
// endpoints included.
std::vector<Vec2> sample_spline(const std::vector<Vec2>& ctrl, double step = 0.25) {
  std::vector<Vec2> pts;
  if (ctrl.size() < 2) return ctrl;
  const int n = static_cast<int>(ctrl.size());
  auto at = [&](int i) { return ctrl[static_cast<std::size_t>(std::clamp(i, 0, n - 1))]; };
  for (int seg = 0; seg < n - 1; ++seg) {
    const Vec2 a = at(seg), b = at(seg + 1);
    const double len = std::hypot(b.u - a.u, b.v - a.v);
    const int steps = std::max(2, static_cast<int>(std::ceil(len / step)));
    for (int s = 0; s < steps; ++s)
      pts.push_back(catmull_rom(at(seg - 1), a, b, at(seg + 2),
                                static_cast<double>(s) / steps));
  }
  pts.push_back(ctrl.back());
  return pts;
}

// Stamp a curve into the image (multiplicative darkening toward `level`) and
// optionally into a binary mask.
void stamp_curve(Image& img, Image* mask, const std::vector<Vec2>& pts,
                 double radius, double level, double opacity) {
  for (const auto& p : pts) {
    const int y0 = static_cast<int>(std::floor(p.v - radius));
    const int y1 = static_cast<int>(std::ceil(p.v + radius));
    const int x0 = static_cast<int>(std::floor(p.u - radius));
    const int x1 = static_cast<int>(std::ceil(p.u + radius));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        if (!img.in_bounds(y, x)) continue;
        const double d = std::hypot(x - p.u, y - p.v);
        if (d > radius) continue;
        double& v = img.at(y, x);
        v = std::min(v, v + opacity * (level - v));
        if (mask) mask->at(y, x) = 1.0;
      }
  }
}

Curve make_catheter_curve(int size, Rng& rng) {
  Curve c;
  const double m = 0.12 * size;
  // Entry on the left border, progressing toward the interior; the last
  // control point is the tip and stays well inside the frame.
  double u = 2.0;
  double v = rng.uniform(0.25 * size, 0.75 * size);
  c.ctrl.push_back({u, v});
  const int n_ctrl = 4 + rng.uniform_int(0, 2);
  for (int i = 1; i < n_ctrl; ++i) {
    u += rng.uniform(0.10 * size, 0.22 * size);
    v += rng.uniform(-0.18 * size, 0.18 * size);
    u = std::clamp(u, m, size - 1 - m);
    v = std::clamp(v, m, size - 1 - m);
    c.ctrl.push_back({u, v});
  }
  // Keep the tip inside the central region so moderate motion cannot push it
  // off the frame.
  c.ctrl.back().u = std::clamp(c.ctrl.back().u, 0.30 * size, 0.70 * size);
  c.ctrl.back().v = std::clamp(c.ctrl.back().v, 0.30 * size, 0.70 * size);
  return c;
}

double dist_to_samples(const std::vector<Vec2>& samples, const Vec2& p) {
  double best = 1e18;
  for (const auto& s : samples) best = std::min(best, std::hypot(s.u - p.u, s.v - p.v));
  return best;
}

Curve make_distractor_curve(int size, const std::vector<Vec2>& cath_samples,
                            double clearance, Rng& rng) {
  for (int attempt = 0; attempt < 30; ++attempt) {
    Curve c;
    double u = rng.uniform(0.1 * size, 0.9 * size);
    double v = (rng.uniform() < 0.5) ? 2.0 : size - 3.0;
    const double dv = (v < size / 2.0) ? 1.0 : -1.0;
    c.ctrl.push_back({u, v});
    for (int i = 0; i < 4; ++i) {
      u += rng.uniform(-0.12 * size, 0.12 * size);
      v += dv * rng.uniform(0.12 * size, 0.25 * size);
      c.ctrl.push_back({std::clamp(u, 2.0, size - 3.0), std::clamp(v, 2.0, size - 3.0)});
    }
    bool clear = true;
    for (const auto& p : sample_spline(c.ctrl, 1.0))
      if (dist_to_samples(cath_samples, p) < clearance) {
        clear = false;
        break;
      }
    if (clear) return c;
  }
  // Fallback: straight vertical wire in the column farthest from the catheter.
  double best_u = 2.0, best_d = -1.0;
  for (int x = 2; x < size - 2; x += 4) {
    double d = dist_to_samples(cath_samples, {static_cast<double>(x), size / 2.0});
    if (d > best_d) {
      best_d = d;
      best_u = x;
    }
  }
  return Curve{{{best_u, 2.0}, {best_u, size / 2.0}, {best_u, size - 3.0}}};
}

// Random binary branching tree used as the angiographic contrast occluder.
void make_vessel_tree(std::vector<std::vector<Vec2>>& branches, Vec2 root,
                      double angle, double len, int depth, int size, Rng& rng) {
  if (depth <= 0 || len < 4.0) return;
  Vec2 end{root.u + len * std::cos(angle), root.v + len * std::sin(angle)};
  end.u = std::clamp(end.u, 1.0, size - 2.0);
  end.v = std::clamp(end.v, 1.0, size - 2.0);
  Vec2 mid{(root.u + end.u) / 2 + rng.uniform(-3, 3),
           (root.v + end.v) / 2 + rng.uniform(-3, 3)};
  branches.push_back({root, mid, end});
  const int kids = 1 + (rng.uniform() < 0.7 ? 1 : 0);
  for (int i = 0; i < kids; ++i)
    make_vessel_tree(branches, end, angle + rng.uniform(-0.9, 0.9), len * 0.75,
                     depth - 1, size, rng);
}

Image make_background(int size, Rng& rng) {
  Image bg(size, size, 0.78);
  const double fx = rng.uniform(0.5, 1.5), fy = rng.uniform(0.5, 1.5);
  const double px = rng.uniform(0, 2 * M_PI), py = rng.uniform(0, 2 * M_PI);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      bg.at(y, x) += 0.05 * std::sin(2 * M_PI * fx * x / size + px) *
                     std::cos(2 * M_PI * fy * y / size + py);
  return bg;
}

}  // namespace

SequenceRecord generate_sequence(std::uint64_t seed, int n_frames,
                                 const std::string& scenario,
                                 const MotionModel& motion, int size,
                                 const GenOptions& opts) {
  if (scenario != "fluoro" && scenario != "angio" && scenario != "devices")
    throw TensorError("generate_sequence: unknown scenario '" + scenario + "'");
  if (n_frames < 2) throw TensorError("generate_sequence: need at least 2 frames");
  if (size < 8 || (size & (size - 1)) != 0)
    throw TensorError("generate_sequence: size must be a power of two");

  Rng rng(seed);
  SequenceRecord rec;
  rec.scenario = scenario;
  rec.seed = seed;
  rec.size = size;

  const Image bg = make_background(size, rng);
  const Curve cath = make_catheter_curve(size, rng);
  const double width = rng.uniform(2.0, 4.0);  // stroke width in px
  const auto base_samples = sample_spline(cath.ctrl);

  std::vector<Curve> distractors;
  if (scenario == "devices") {
    // One wire deliberately passes a few pixels from the tip so that it acts
    // as a genuine distractor/occluder as the catheter sweeps past it; the
    // remaining wires land anywhere with minimal clearance from the body.
    {
      const Vec2 tip = cath.ctrl.back();
      const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
      const double u_mid =
          std::clamp(tip.u + side * rng.uniform(2.0, 5.0), 2.0, size - 3.0);
      Curve w;
      w.ctrl.push_back({std::clamp(u_mid + rng.uniform(-0.15, 0.15) * size, 2.0,
                                   size - 3.0),
                        2.0});
      w.ctrl.push_back({u_mid, tip.v});
      w.ctrl.push_back({std::clamp(u_mid + rng.uniform(-0.15, 0.15) * size, 2.0,
                                   size - 3.0),
                        size - 3.0});
      distractors.push_back(std::move(w));
    }
    const int n_extra = 1 + rng.uniform_int(0, 1);
    for (int i = 0; i < n_extra; ++i)
      distractors.push_back(make_distractor_curve(size, base_samples, 2.0, rng));
  }

  std::vector<std::vector<Vec2>> vessels;
  if (scenario == "angio") {
    const Vec2 root = cath.ctrl.back();
    make_vessel_tree(vessels, root, rng.uniform(0, 2 * M_PI), 0.22 * size, 5, size, rng);
  }

  const double cardiac_dir = rng.uniform(0, 2 * M_PI);
  const double resp_dir = cardiac_dir + M_PI / 2.0;

  for (int t = 0; t < n_frames; ++t) {
    const double c = motion.cardiac_amp_px *
                     std::sin(2 * M_PI * t / std::max(2.0, motion.cardiac_period_frames));
    const double r = motion.resp_amp_px *
                     std::sin(2 * M_PI * t / std::max(2.0, motion.resp_period_frames));
    const Vec2 off{c * std::cos(cardiac_dir) + r * std::cos(resp_dir) +
                       motion.drift_px_per_frame * t,
                   c * std::sin(cardiac_dir) + r * std::sin(resp_dir)};

    Curve moved = cath;
    for (auto& p : moved.ctrl) {
      p.u += off.u + motion.jitter_px * rng.normal();
      p.v += off.v + motion.jitter_px * rng.normal();
    }
    // The tip control point carries the translation exactly so the annotation
    // stays analytic under jitter of interior points.
    moved.ctrl.back() = {cath.ctrl.back().u + off.u, cath.ctrl.back().v + off.v};

    Frame fr;
    fr.timestamp = static_cast<double>(t);
    fr.image = bg;
    Image mask(size, size, 0.0);

    for (const auto& d : distractors)
      stamp_curve(fr.image, nullptr, sample_spline(d.ctrl), width / 2.0, 0.30, 1.0);

    if (scenario == "angio") {
      // Contrast injection: tree opacity ramps over frames 20% .. 80%.
      const double t0 = 0.2 * n_frames, t1 = 0.8 * n_frames;
      const double ramp = std::clamp((t - t0) / std::max(1.0, t1 - t0), 0.0, 1.0);
      const double opacity = 0.9 * ramp;
      if (opacity > 0.0)
        for (const auto& b : vessels)
          stamp_curve(fr.image, nullptr, sample_spline(b), 2.8, 0.35, opacity);
    }

    stamp_curve(fr.image, &mask, sample_spline(moved.ctrl), width / 2.0, 0.22, 1.0);

    if (opts.noise_sigma > 0.0)
      for (auto& v : fr.image.px) v += opts.noise_sigma * rng.normal();
    fr.image.quantize8();

    if (t % std::max(1, opts.annotate_every_k) == 0) {
      fr.tip_gt = moved.ctrl.back();
      fr.mask_gt = mask;
    }
    rec.frames.push_back(std::move(fr));
  }
  return rec;
}

Tensor warp_by_flow(const Tensor& map, const Tensor& flow) {
  if (map.ndim() != 2 || flow.ndim() != 3 || flow.dim(0) != 2)
    throw TensorError("warp_by_flow: need map[H,W], flow[2,H,W]");
  const int h = map.dim(0), w = map.dim(1);
  if (flow.dim(1) != h || flow.dim(2) != w)
    throw TensorError("warp_by_flow: size mismatch");
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> grid(2 * n);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      grid[p] = x - flow.data()[p];          // sample position x
      grid[n + p] = y - flow.data()[n + p];  // sample position y
    }
  Tensor g = Tensor::from_data({2, h, w}, std::move(grid));
  Tensor in = reshape(map, {1, h, w});
  return reshape(grid_sample(in, g), {h, w});
}

FlowTrainingPair make_flow_training_pair(const Tensor& mask, const Tensor& flow) {
  const int h = mask.dim(0), w = mask.dim(1);
  const double lim = std::min(h, w) / 4.0;
  for (double v : flow.data())
    if (std::abs(v) > lim)
      throw TensorError("make_flow_training_pair: displacement exceeds image/4");
  FlowTrainingPair pair;
  pair.mask = mask.detach();
  pair.flow = flow.detach();
  pair.warped = warp_by_flow(mask, flow);
  return pair;
}

Tensor uniform_flow(int h, int w, double du, double dv) {
  std::vector<double> d(2 * static_cast<std::size_t>(h) * w);
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::fill(d.begin(), d.begin() + n, du);
  std::fill(d.begin() + n, d.end(), dv);
  return Tensor::from_data({2, h, w}, std::move(d));
}

Tensor random_smooth_flow(int h, int w, double max_disp, Rng& rng) {
  const int gh = 4, gw = 4;
  std::vector<double> coarse(2 * gh * gw);
  for (auto& v : coarse) v = rng.uniform(-max_disp, max_disp);
  std::vector<double> out(2 * static_cast<std::size_t>(h) * w);
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double gy = static_cast<double>(y) / (h - 1) * (gh - 1);
        const double gx = static_cast<double>(x) / (w - 1) * (gw - 1);
        const int y0 = std::min(static_cast<int>(gy), gh - 2);
        const int x0 = std::min(static_cast<int>(gx), gw - 2);
        const double fy = gy - y0, fx = gx - x0;
        const double* g = coarse.data() + c * gh * gw;
        out[(static_cast<std::size_t>(c) * h + y) * w + x] =
            (1 - fy) * ((1 - fx) * g[y0 * gw + x0] + fx * g[y0 * gw + x0 + 1]) +
            fy * ((1 - fx) * g[(y0 + 1) * gw + x0] + fx * g[(y0 + 1) * gw + x0 + 1]);
      }
  return Tensor::from_data({2, h, w}, std::move(out));
}

void save_sequence(const SequenceRecord& rec, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "frames");
  bool any_mask = false;
  for (const auto& f : rec.frames)
    if (f.mask_gt) any_mask = true;
  if (any_mask) fs::create_directories(fs::path(dir) / "masks");

  json idx;
  idx["size"] = rec.size;
  idx["pixel_spacing_mm"] = rec.pixel_spacing_mm;
  idx["scenario"] = rec.scenario;
  idx["seed"] = rec.seed;
  idx["frames"] = json::array();
  char name[32];
  for (std::size_t i = 0; i < rec.frames.size(); ++i) {
    const Frame& f = rec.frames[i];
    std::snprintf(name, sizeof(name), "%05zu.pgm", i);
    json jf;
    jf["image"] = std::string("frames/") + name;
    jf["timestamp"] = f.timestamp;
    write_pgm(f.image, (fs::path(dir) / "frames" / name).string());
    if (f.tip_gt) jf["tip"] = {f.tip_gt->u, f.tip_gt->v};
    if (f.mask_gt) {
      jf["mask"] = std::string("masks/") + name;
      write_pgm(*f.mask_gt, (fs::path(dir) / "masks" / name).string());
    }
    idx["frames"].push_back(jf);
  }
  std::ofstream out(fs::path(dir) / "seq.json");
  out << idx.dump(2) << "\n";
}

SequenceRecord load_sequence(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "seq.json");
  if (!in) throw TensorError("load_sequence: missing " + dir + "/seq.json");
  json idx;
  try {
    in >> idx;
  } catch (const json::exception& e) {
    throw TensorError("load_sequence: malformed seq.json: " + std::string(e.what()));
  }
  SequenceRecord rec;
  auto req = [&](const json& j, const char* key) -> const json& {
    if (!j.contains(key))
      throw TensorError(std::string("load_sequence: seq.json missing key '") + key + "'");
    return j.at(key);
  };
  rec.size = req(idx, "size").get<int>();
  rec.pixel_spacing_mm = req(idx, "pixel_spacing_mm").get<double>();
  rec.scenario = req(idx, "scenario").get<std::string>();
  rec.seed = req(idx, "seed").get<std::uint64_t>();
  for (const auto& jf : req(idx, "frames")) {
    Frame f;
    f.image = read_pgm((fs::path(dir) / req(jf, "image").get<std::string>()).string());
    if (f.image.w != rec.size || f.image.h != rec.size)
      throw TensorError("load_sequence: frame size does not match index 'size'");
    f.timestamp = req(jf, "timestamp").get<double>();
    if (jf.contains("tip")) f.tip_gt = Vec2{jf["tip"][0].get<double>(), jf["tip"][1].get<double>()};
    if (jf.contains("mask")) {
      const auto mpath = fs::path(dir) / jf["mask"].get<std::string>();
      if (fs::exists(mpath)) {
        f.mask_gt = read_pgm(mpath.string());
        for (auto& v : f.mask_gt->px) v = v > 0.5 ? 1.0 : 0.0;
      }
    }
    rec.frames.push_back(std::move(f));
  }
  return rec;
}

}  // namespace contrack
