#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "contrack/flow.hpp"
#include "contrack/fusion.hpp"
#include "contrack/localizer.hpp"
#include "contrack/synthcath.hpp"

namespace contrack {

struct TrackerConfig {
  LocalizerConfig loc;
  FlowConfig flow;
  double alpha = 0.5;
  double tau_m = 0.5;
  int refiner_channels = 8;
  int update_interval = 3;       // dynamic template refresh period
  double conf_threshold = 0.7;   // confidence gate for template updates
  // Ablation toggles.
  bool use_flow = true;
  bool use_multitask = true;
  bool use_multi_templates = true;
};

struct TemplateSet {
  struct Entry {
    Tensor patch;  // [ts, ts]
    double confidence = 1.0;
    int frame_index = 0;
  };
  Tensor initial;               // pinned, never evicted
  std::deque<Entry> dynamic;    // FIFO, ordered by frame index
  int max_templates = 3;

  std::vector<Tensor> all() const {
    std::vector<Tensor> out{initial};
    for (const auto& e : dynamic) out.push_back(e.patch);
    return out;
  }
};

struct TrackState {
  Vec2 last_tip;          // image coordinates
  Tensor last_mask;       // full-image body-mask map
  double last_confidence = 0.0;
  Vec2 search_center;
  int frame_index = 0;
};

struct PredictionRecord {
  int frame_index = 0;
  Vec2 tip_spatial;                  // x̂^s in image coords
  std::optional<Vec2> tip_flow;      // x̂^f in image coords (absent when flow off)
  Vec2 tip_final;
  double confidence = 0.0;
  double ms_per_frame = 0.0;
  bool low_confidence = false;
};

// Crop a square patch centered at an integer-rounded point; zero-padded at
// the borders. Returns the patch and the patch->image offset.
Tensor crop_patch(const Image& img, const Vec2& center, int size, Vec2* offset);
Tensor crop_patch(const Tensor& map, const Vec2& center, int size, Vec2* offset);

class Tracker {
 public:
  Tracker() = default;
  Tracker(const TrackerConfig& cfg, Rng& rng);

  const TrackerConfig& config() const { return cfg_; }
  Localizer& localizer() { return loc_; }
  const Localizer& localizer() const { return loc_; }
  FlowEstimator& flow() { return flow_; }
  Refiner& refiner() { return refiner_; }
  const Refiner& refiner() const { return refiner_; }

  void init(const Frame& frame0, const Vec2& x0, TrackState& state,
            TemplateSet& templates) const;
  PredictionRecord track_frame(TrackState& state, const TemplateSet& templates,
                               const Frame& frame) const;
  void maybe_update_templates(const TrackState& state, TemplateSet& templates,
                              const Frame& frame) const;
  std::vector<PredictionRecord> track_sequence(const SequenceRecord& rec) const;

  // Named parameters grouped into checkpoint sections.
  nn::ParamMap params() const;

 private:
  TrackerConfig cfg_;
  Localizer loc_;
  FlowEstimator flow_;
  Refiner refiner_;
};

void write_prediction_csv(const std::vector<PredictionRecord>& records,
                          const std::string& path);

}  // namespace contrack
