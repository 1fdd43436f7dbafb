#pragma once

#include <optional>
#include <string>
#include <vector>

#include "contrack/image.hpp"
#include "contrack/tensor.hpp"

namespace contrack {

struct Vec2 {
  double u = 0.0;  // x / column
  double v = 0.0;  // y / row
};

struct Frame {
  Image image;
  std::optional<Vec2> tip_gt;
  std::optional<Image> mask_gt;  // binary (0 or 1)
  double timestamp = 0.0;
};

struct SequenceRecord {
  std::vector<Frame> frames;
  double pixel_spacing_mm = 0.308;
  std::string scenario = "fluoro";  // "fluoro" | "angio" | "devices"
  std::uint64_t seed = 0;
  int size = 160;
};

// Two sinusoids plus linear drift; amplitudes in pixels, periods in frames.
struct MotionModel {
  double cardiac_amp_px = 0.0;
  double cardiac_period_frames = 20.0;
  double resp_amp_px = 0.0;
  double resp_period_frames = 60.0;
  double drift_px_per_frame = 0.0;
  double jitter_px = 0.0;  // per-frame spline control point jitter

  static MotionModel typical() {
    MotionModel m;
    m.cardiac_amp_px = 3.0;
    m.resp_amp_px = 5.0;
    m.drift_px_per_frame = 0.05;
    m.jitter_px = 0.3;
    return m;
  }
};

struct GenOptions {
  double noise_sigma = 0.02;
  int annotate_every_k = 1;  // tip/mask annotations on every k-th frame
};

SequenceRecord generate_sequence(std::uint64_t seed, int n_frames,
                                 const std::string& scenario,
                                 const MotionModel& motion, int size,
                                 const GenOptions& opts = {});

// Supervised flow training example built from a body mask and a synthetic
// displacement field.
struct FlowTrainingPair {
  Tensor mask;        // [H,W]
  Tensor warped;      // [H,W]
  Tensor flow;        // [2,H,W], channel 0 = du, channel 1 = dv
};

FlowTrainingPair make_flow_training_pair(const Tensor& mask, const Tensor& flow);

// Backward warp: out(p) = in(p - flow(p)).
Tensor warp_by_flow(const Tensor& map, const Tensor& flow);

// Smooth random flow field with displacement bounded by max_disp.
Tensor random_smooth_flow(int h, int w, double max_disp, Rng& rng);
Tensor uniform_flow(int h, int w, double du, double dv);

// Directory layout: seq.json + frames/%05d.pgm + masks/%05d.pgm.
void save_sequence(const SequenceRecord& rec, const std::string& dir);
SequenceRecord load_sequence(const std::string& dir);

}  // namespace contrack
