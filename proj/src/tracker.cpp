#include "contrack/tracker.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

namespace contrack {

namespace {

Tensor crop_from(const double* src, int sw, int sh, const Vec2& center, int size,
                 Vec2* offset) {
  const int cx = static_cast<int>(std::lround(center.u));
  const int cy = static_cast<int>(std::lround(center.v));
  const int x0 = cx - size / 2;
  const int y0 = cy - size / 2;
  if (offset) *offset = {static_cast<double>(x0), static_cast<double>(y0)};
  std::vector<double> out(static_cast<std::size_t>(size) * size, 0.0);
  for (int y = 0; y < size; ++y) {
    const int sy = y0 + y;
    if (sy < 0 || sy >= sh) continue;
    for (int x = 0; x < size; ++x) {
      const int sx = x0 + x;
      if (sx < 0 || sx >= sw) continue;
      out[static_cast<std::size_t>(y) * size + x] =
          src[static_cast<std::size_t>(sy) * sw + sx];
    }
  }
  return Tensor::from_data({size, size}, std::move(out));
}

}  // namespace

Tensor crop_patch(const Image& img, const Vec2& center, int size, Vec2* offset) {
  return crop_from(img.px.data(), img.w, img.h, center, size, offset);
}

Tensor crop_patch(const Tensor& map, const Vec2& center, int size, Vec2* offset) {
  if (map.ndim() != 2) throw TensorError("crop_patch: need 2-d map");
  return crop_from(map.data().data(), map.dim(1), map.dim(0), center, size, offset);
}

Tracker::Tracker(const TrackerConfig& cfg, Rng& rng)
    : cfg_(cfg),
      loc_(cfg.loc, rng),
      flow_(cfg.flow, rng),
      refiner_(cfg.refiner_channels, rng) {}

void Tracker::init(const Frame& frame0, const Vec2& x0, TrackState& state,
                   TemplateSet& templates) const {
  if (x0.u < 0 || x0.u > frame0.image.w - 1 || x0.v < 0 || x0.v > frame0.image.h - 1)
    throw TensorError("init: initial tip outside image");
  templates = TemplateSet{};
  templates.max_templates = cfg_.use_multi_templates ? cfg_.loc.max_templates : 1;
  templates.initial = crop_patch(frame0.image, x0, cfg_.loc.template_size, nullptr);
  state = TrackState{};
  state.last_tip = x0;
  state.search_center = x0;
  state.last_mask = Tensor::zeros({frame0.image.h, frame0.image.w});
  state.last_confidence = 1.0;
  state.frame_index = 0;
}

PredictionRecord Tracker::track_frame(TrackState& state, const TemplateSet& templates,
                                      const Frame& frame) const {
  const auto t_start = std::chrono::steady_clock::now();
  const int s = cfg_.loc.search_size;
  Vec2 off;
  Tensor search = crop_patch(frame.image, state.search_center, s, &off);
  auto to_image = [&](const Vec2& p) { return Vec2{p.u + off.u, p.v + off.v}; };
  auto to_patch = [&](const Vec2& p) { return Vec2{p.u - off.u, p.v - off.v}; };

  SpatialPrediction sp = loc_.forward(search, templates.all());

  PredictionRecord rec;
  rec.frame_index = state.frame_index + 1;
  rec.tip_spatial = to_image(sp.tip);

  // Temporal path: flow between the previous and current body masks on a
  // crop around their union, then warp the previous tip.
  Tensor tip_flow_map = Tensor::zeros({s, s});
  if (cfg_.use_flow) {
    Tensor prev_mask_patch = crop_patch(state.last_mask, state.search_center, s, nullptr);
    CropRegion cr = crop_for_flow(prev_mask_patch, sp.body_mask, cfg_.flow.crop_margin,
                                  2 * cfg_.flow.stride);
    Vec2 prev_tip_patch = to_patch(state.last_tip);
    Vec2 local_prev = cr.to_local(prev_tip_patch);
    if (local_prev.u >= 0 && local_prev.u <= cr.w - 1 && local_prev.v >= 0 &&
        local_prev.v <= cr.h - 1) {
      Tensor fa = crop_tensor(prev_mask_patch, cr);
      Tensor fb = crop_tensor(sp.body_mask, cr);
      Tensor fl = flow_.flow_between(fa, fb);
      WarpedTip wt = warp_point(local_prev, fl, cfg_.flow.heatmap_sigma);
      Vec2 warped_patch = cr.to_global(wt.point);
      rec.tip_flow = to_image(warped_patch);
      tip_flow_map = nn::gaussian_heatmap(s, s, warped_patch.u, warped_patch.v,
                                          cfg_.flow.heatmap_sigma);
    }
  }

  Tensor mask_for_fusion =
      cfg_.use_multitask ? sp.body_mask : Tensor::zeros({s, s});
  ScoreMap sm = fuse_score(sp.tip_heatmap, tip_flow_map, mask_for_fusion,
                           cfg_.alpha, cfg_.tau_m);
  Refiner::Result rr = refiner_.refine(sm);

  if (rr.degenerate || sp.degenerate) {
    rec.tip_final = state.last_tip;
    rec.confidence = 0.0;
    rec.low_confidence = true;
  } else {
    rec.tip_final = to_image(rr.tip);
    rec.confidence = rr.confidence;
  }
  // Clamp into the frame.
  rec.tip_final.u = std::clamp(rec.tip_final.u, 0.0, frame.image.w - 1.0);
  rec.tip_final.v = std::clamp(rec.tip_final.v, 0.0, frame.image.h - 1.0);

  // State update: paste the predicted mask back into image coordinates.
  Tensor full_mask = Tensor::zeros({frame.image.h, frame.image.w});
  const int x0 = static_cast<int>(off.u), y0 = static_cast<int>(off.v);
  for (int y = 0; y < s; ++y) {
    const int iy = y0 + y;
    if (iy < 0 || iy >= frame.image.h) continue;
    for (int x = 0; x < s; ++x) {
      const int ix = x0 + x;
      if (ix < 0 || ix >= frame.image.w) continue;
      full_mask.data()[static_cast<std::size_t>(iy) * frame.image.w + ix] =
          sp.body_mask.data()[static_cast<std::size_t>(y) * s + x];
    }
  }
  state.last_mask = full_mask;
  state.last_tip = rec.tip_final;
  state.last_confidence = rec.confidence;
  state.search_center = rec.tip_final;  // center-on-last policy
  state.frame_index = rec.frame_index;

  rec.ms_per_frame = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - t_start)
                         .count();
  return rec;
}

void Tracker::maybe_update_templates(const TrackState& state, TemplateSet& templates,
                                     const Frame& frame) const {
  if (!cfg_.use_multi_templates) return;
  if (cfg_.update_interval <= 0) return;  // interval "infinity": single template
  if (state.frame_index % cfg_.update_interval != 0) return;
  if (state.last_confidence < cfg_.conf_threshold) return;
  TemplateSet::Entry e;
  e.patch = crop_patch(frame.image, state.last_tip, cfg_.loc.template_size, nullptr);
  e.confidence = state.last_confidence;
  e.frame_index = state.frame_index;
  templates.dynamic.push_back(std::move(e));
  while (static_cast<int>(templates.dynamic.size()) > templates.max_templates - 1)
    templates.dynamic.pop_front();
}

std::vector<PredictionRecord> Tracker::track_sequence(const SequenceRecord& rec) const {
  if (rec.frames.empty() || !rec.frames[0].tip_gt)
    throw TensorError("track_sequence: first frame must carry a tip annotation");
  TrackState state;
  TemplateSet templates;
  init(rec.frames[0], *rec.frames[0].tip_gt, state, templates);
  std::vector<PredictionRecord> out;
  PredictionRecord first;
  first.frame_index = 0;
  first.tip_spatial = first.tip_final = *rec.frames[0].tip_gt;
  first.confidence = 1.0;
  out.push_back(first);
  for (std::size_t t = 1; t < rec.frames.size(); ++t) {
    out.push_back(track_frame(state, templates, rec.frames[t]));
    maybe_update_templates(state, templates, rec.frames[t]);
  }
  return out;
}

nn::ParamMap Tracker::params() const {
  nn::ParamMap pm;
  pm.merge("loc/", loc_.params());
  pm.merge("flow/", flow_.params());
  pm.merge("refine/", refiner_.params());
  return pm;
}

void write_prediction_csv(const std::vector<PredictionRecord>& records,
                          const std::string& path) {
  std::ofstream f(path);
  if (!f) throw TensorError("cannot open " + path + " for writing");
  f << "frame_index,u_s,v_s,u_f,v_f,u_final,v_final,confidence,ms_per_frame\n";
  f.precision(10);
  for (const auto& r : records) {
    f << r.frame_index << ',' << r.tip_spatial.u << ',' << r.tip_spatial.v << ',';
    if (r.tip_flow)
      f << r.tip_flow->u << ',' << r.tip_flow->v << ',';
    else
      f << ",,";
    f << r.tip_final.u << ',' << r.tip_final.v << ',' << r.confidence << ','
      << r.ms_per_frame << "\n";
  }
}

}  // namespace contrack
