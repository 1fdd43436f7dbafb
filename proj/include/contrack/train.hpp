#pragma once

#include <string>
#include <vector>

#include "contrack/flow.hpp"
#include "contrack/tracker.hpp"

namespace contrack {

struct TrainConfig {
  int epochs = 300;              // passes over the training set
  double learning_rate = 1e-4;
  int batch_size = 1;
  std::uint64_t seed = 0;
  std::string phase = "end2end";  // "flow" | "end2end"
  bool multitask = true;
  bool flow = true;
  bool multi_templates = true;
  std::string optimizer = "sgd";  // "sgd" (momentum 0.9) | "adam"
  double momentum = 0.9;
  int max_steps = 0;   // caps total steps when > 0
  int flow_crop = 64;  // training crop side for the flow phase
};

// Momentum SGD by default; adaptive-moment ("adam") behind the config flag.
class Optimizer {
 public:
  Optimizer(nn::ParamMap params, const std::string& kind, double momentum = 0.9);

  void zero_grad() { params_.zero_grad(); }
  void step(double lr);
  nn::ParamMap& params() { return params_; }

 private:
  nn::ParamMap params_;
  bool adam_ = false;
  double momentum_ = 0.9;
  long t_ = 0;
  std::vector<std::vector<double>> v_;  // momentum / first moment
  std::vector<std::vector<double>> m2_; // second moment (adam)
};

struct LossCurve {
  std::vector<double> values;
  void save_csv(const std::string& path) const;
};

// Flow phase: supervised on synthetic warps of generated body masks.
LossCurve train_flow_phase(FlowEstimator& flow,
                           const std::vector<SequenceRecord>& data,
                           const TrainConfig& cfg);

// End-to-end phase: localizer + refinement trained jointly on annotated
// frames; the flow module stays frozen and its role in fusion is played by a
// rendered temporal heatmap.
LossCurve train_end2end_phase(Tracker& tracker,
                              const std::vector<SequenceRecord>& data,
                              const TrainConfig& cfg);

// Crop a square window around the mask centroid (mask training helper).
Tensor crop_around_mask(const Tensor& mask, int size);

}  // namespace contrack
