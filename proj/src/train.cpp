#include "contrack/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace contrack {

Optimizer::Optimizer(nn::ParamMap params, const std::string& kind, double momentum)
    : params_(std::move(params)), adam_(kind == "adam"), momentum_(momentum) {
  if (kind != "sgd" && kind != "adam")
    throw TensorError("optimizer: unknown kind '" + kind + "'");
  for (const auto& [name, t] : params_.items) {
    v_.emplace_back(t.size(), 0.0);
    if (adam_) m2_.emplace_back(t.size(), 0.0);
  }
}

void Optimizer::step(double lr) {
  ++t_;
  for (std::size_t p = 0; p < params_.items.size(); ++p) {
    Tensor& t = params_.items[p].second;
    auto& data = t.data();
    auto& grad = t.grad();
    auto& v = v_[p];
    if (adam_) {
      constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
      auto& m2 = m2_[p];
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
      for (std::size_t i = 0; i < data.size(); ++i) {
        v[i] = b1 * v[i] + (1 - b1) * grad[i];
        m2[i] = b2 * m2[i] + (1 - b2) * grad[i] * grad[i];
        data[i] -= lr * (v[i] / c1) / (std::sqrt(m2[i] / c2) + eps);
      }
    } else {
      for (std::size_t i = 0; i < data.size(); ++i) {
        v[i] = momentum_ * v[i] + grad[i];
        data[i] -= lr * v[i];
      }
    }
  }
}

void LossCurve::save_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw TensorError("cannot open " + path + " for writing");
  f << "step,loss\n";
  f.precision(12);
  for (std::size_t i = 0; i < values.size(); ++i) f << i << ',' << values[i] << "\n";
}

Tensor crop_around_mask(const Tensor& mask, int size) {
  const int h = mask.dim(0), w = mask.dim(1);
  double su = 0, sv = 0, n = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (mask.data()[static_cast<std::size_t>(y) * w + x] > 0.5) {
        su += x;
        sv += y;
        n += 1;
      }
  const double cu = n > 0 ? su / n : w / 2.0;
  const double cv = n > 0 ? sv / n : h / 2.0;
  const int x0 = std::clamp(static_cast<int>(std::lround(cu)) - size / 2, 0,
                            std::max(0, w - size));
  const int y0 = std::clamp(static_cast<int>(std::lround(cv)) - size / 2, 0,
                            std::max(0, h - size));
  std::vector<double> out(static_cast<std::size_t>(size) * size, 0.0);
  for (int y = 0; y < size && y0 + y < h; ++y)
    for (int x = 0; x < size && x0 + x < w; ++x)
      out[static_cast<std::size_t>(y) * size + x] =
          mask.data()[static_cast<std::size_t>(y0 + y) * w + x0 + x];
  return Tensor::from_data({size, size}, std::move(out));
}

namespace {

std::vector<Tensor> collect_masks(const std::vector<SequenceRecord>& data, int crop) {
  // Crops are centered on the tip when one is annotated. At run time the flow
  // operates on search windows centered at the last predicted tip, so this is
  // the operational distribution — and keeping the tip near the crop center is
  // what makes the along-curve flow component identifiable at all: away from
  // the tip a translated curve matches itself (the aperture problem).
  std::vector<Tensor> masks;
  for (const auto& rec : data)
    for (const auto& f : rec.frames) {
      if (!f.mask_gt) continue;
      if (f.tip_gt) {
        Vec2 off;
        masks.push_back(crop_patch(f.mask_gt->to_tensor(), *f.tip_gt, crop, &off));
      } else {
        masks.push_back(crop_around_mask(f.mask_gt->to_tensor(), crop));
      }
    }
  if (masks.empty()) throw TensorError("train: dataset carries no mask annotations");
  return masks;
}

[[noreturn]] void abort_nan(int step, const TensorError& e) {
  throw TensorError("training aborted at step " + std::to_string(step) + ": " +
                    e.what());
}

}  // namespace

LossCurve train_flow_phase(FlowEstimator& flow,
                           const std::vector<SequenceRecord>& data,
                           const TrainConfig& cfg) {
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  const int crop = cfg.flow_crop;
  auto masks = collect_masks(data, crop);
  Optimizer opt(flow.params(), cfg.optimizer, cfg.momentum);
  LossCurve curve;
  const long total = cfg.max_steps > 0
                         ? cfg.max_steps
                         : static_cast<long>(cfg.epochs) * static_cast<long>(masks.size());
  const int batch = std::max(1, cfg.batch_size);
  for (long step = 0; step < total; ++step) {
    try {
      opt.zero_grad();
      double batch_loss = 0.0;
      for (int b = 0; b < batch; ++b) {
        const Tensor& mask = masks[static_cast<std::size_t>(rng.raw() % masks.size())];
        // Mix of uniform and smooth synthetic flows, bounded well inside
        // image/4.
        Tensor gt_flow =
            (rng.uniform() < 0.8)
                ? uniform_flow(crop, crop, rng.uniform(-4, 4), rng.uniform(-4, 4))
                : random_smooth_flow(crop, crop, 4.0, rng);
        FlowTrainingPair pair = make_flow_training_pair(mask, gt_flow);
        GradTape tape;
        Tensor pred = flow.flow_between(pair.mask, pair.warped);
        Tensor loss = mul_scalar(flow_loss(pred, pair.flow, pair.mask), 1.0 / batch);
        batch_loss += loss.item() * batch;
        tape.backward(loss);
      }
      curve.values.push_back(batch_loss / batch);
      opt.step(cfg.learning_rate);
    } catch (const TensorError& e) {
      abort_nan(static_cast<int>(step), e);
    }
  }
  return curve;
}

LossCurve train_end2end_phase(Tracker& tracker,
                              const std::vector<SequenceRecord>& data,
                              const TrainConfig& cfg) {
  Rng rng(cfg.seed ^ 0x517cc1b727220a95ull);
  struct Sample {
    const SequenceRecord* rec;
    std::size_t frame;
  };
  std::vector<Sample> samples;
  for (const auto& rec : data)
    for (std::size_t i = 0; i < rec.frames.size(); ++i)
      if (rec.frames[i].tip_gt) samples.push_back({&rec, i});
  if (samples.empty()) throw TensorError("train: dataset carries no tip annotations");

  const TrackerConfig& tc = tracker.config();
  const int s = tc.loc.search_size;
  const int ts = tc.loc.template_size;
  LossWeights lw;
  lw.sigma = tc.loc.sigma;
  if (!cfg.multitask) lw.m_bce = lw.m_dice = 0.0;

  nn::ParamMap pm;
  pm.merge("loc/", tracker.localizer().params());
  pm.merge("refine/", tracker.refiner().params());
  Optimizer opt(std::move(pm), cfg.optimizer, cfg.momentum);

  LossCurve curve;
  const long total = cfg.max_steps > 0
                         ? cfg.max_steps
                         : static_cast<long>(cfg.epochs) * static_cast<long>(samples.size());
  for (long step = 0; step < total; ++step) {
    const Sample& smp = samples[static_cast<std::size_t>(rng.raw() % samples.size())];
    const Frame& fr = smp.rec->frames[smp.frame];
    const Vec2 gt = *fr.tip_gt;
    // Search window centered near, not on, the target: mimics tracking where
    // the center is the previous prediction.
    Vec2 center{gt.u + rng.uniform(-8, 8), gt.v + rng.uniform(-8, 8)};
    Vec2 off;
    Tensor search = crop_patch(fr.image, center, s, &off);
    const Vec2 gt_patch{gt.u - off.u, gt.v - off.v};
    if (gt_patch.u < 2 || gt_patch.u > s - 3 || gt_patch.v < 2 || gt_patch.v > s - 3)
      continue;

    // Templates: the sequence's initial annotated frame, plus crops from
    // other annotated frames when multiple templates are enabled.
    std::vector<Tensor> templates;
    const Frame& f0 = smp.rec->frames[0];
    if (f0.tip_gt) templates.push_back(crop_patch(f0.image, *f0.tip_gt, ts, nullptr));
    if (cfg.multi_templates) {
      // Extra templates come from the same sequence, mirroring the dynamic
      // templates the tracker collects at run time; cross-sequence templates
      // would teach the model to ignore the extra slots.
      std::vector<std::size_t> own;
      for (std::size_t i = 0; i < smp.rec->frames.size(); ++i)
        if (smp.rec->frames[i].tip_gt) own.push_back(i);
      for (int extra = 0; extra < tc.loc.max_templates - 1 && own.size() > 1;
           ++extra) {
        const Frame& of = smp.rec->frames[own[rng.raw() % own.size()]];
        templates.push_back(crop_patch(of.image, *of.tip_gt, ts, nullptr));
        if (static_cast<int>(templates.size()) >= tc.loc.max_templates) break;
      }
    }
    if (templates.empty()) continue;

    Tensor gt_mask;
    if (fr.mask_gt) gt_mask = crop_patch(fr.mask_gt->to_tensor(), center, s, nullptr);

    // Temporal stand-in: flow is frozen in this phase, so the x̂^f input to
    // fusion is a Gaussian rendered near the target, jittered like a warped
    // previous-frame prediction.
    Tensor xf = nn::gaussian_heatmap(
        s, s, std::clamp(gt_patch.u + rng.uniform(-3, 3), 0.0, s - 1.0),
        std::clamp(gt_patch.v + rng.uniform(-3, 3), 0.0, s - 1.0),
        tc.flow.heatmap_sigma);
    if (!cfg.flow) xf = Tensor::zeros({s, s});

    try {
      GradTape tape;
      opt.zero_grad();
      SpatialPrediction sp = tracker.localizer().forward(search, templates);
      Tensor loss = spatial_loss(sp, gt_patch,
                                 (cfg.multitask && gt_mask.defined()) ? &gt_mask : nullptr,
                                 lw);
      Tensor mask_for_fusion = cfg.multitask ? sp.body_mask : Tensor::zeros({s, s});
      ScoreMap sm = fuse_score(sp.tip_heatmap, xf, mask_for_fusion, tc.alpha, tc.tau_m);
      Tensor refined = tracker.refiner().forward(sm.fused);
      loss = add(loss, refinement_loss(refined, gt_patch, tc.loc.sigma));
      curve.values.push_back(loss.item());
      tape.backward(loss);
      opt.step(cfg.learning_rate);
    } catch (const TensorError& e) {
      abort_nan(static_cast<int>(step), e);
    }
  }
  return curve;
}

}  // namespace contrack
