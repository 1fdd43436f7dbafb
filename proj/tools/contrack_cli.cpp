// Command-line driver: data generation, the two training phases, tracking,
// evaluation, the ablation table, and a built-in invariant selftest.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "contrack/checkpoint.hpp"
#include "contrack/eval.hpp"
#include "contrack/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace contrack;

namespace {

// ---------------------------------------------------------------------------
// Config plumbing

struct CliConfig {
  TrackerConfig tracker;
  TrainConfig train;
};

json tracker_config_to_json(const TrackerConfig& c) {
  json j;
  j["loc"] = {{"search_size", c.loc.search_size},
              {"template_size", c.loc.template_size},
              {"enc_channels", c.loc.enc_channels},
              {"enc_stride", c.loc.enc_stride},
              {"d_model", c.loc.d_model},
              {"heads", c.loc.heads},
              {"enc_layers", c.loc.enc_layers},
              {"dec_layers", c.loc.dec_layers},
              {"d_ff", c.loc.d_ff},
              {"max_templates", c.loc.max_templates},
              {"shared_template_pos", c.loc.shared_template_pos},
              {"sigma", c.loc.sigma}};
  j["flow"] = {{"stride", c.flow.stride},
               {"feat_dim", c.flow.feat_dim},
               {"gru_iters", c.flow.gru_iters},
               {"lookup_radius", c.flow.lookup_radius},
               {"hidden_dim", c.flow.hidden_dim},
               {"motion_dim", c.flow.motion_dim},
               {"scale_by_sqrt_df", c.flow.scale_by_sqrt_df},
               {"heatmap_sigma", c.flow.heatmap_sigma},
               {"crop_margin", c.flow.crop_margin}};
  j["alpha"] = c.alpha;
  j["tau_m"] = c.tau_m;
  j["refiner_channels"] = c.refiner_channels;
  j["update_interval"] = c.update_interval;
  j["conf_threshold"] = c.conf_threshold;
  j["use_flow"] = c.use_flow;
  j["use_multitask"] = c.use_multitask;
  j["use_multi_templates"] = c.use_multi_templates;
  return j;
}

template <typename T>
void maybe_get(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void tracker_config_from_json(const json& j, TrackerConfig& c) {
  if (j.contains("loc")) {
    const json& l = j["loc"];
    maybe_get(l, "search_size", c.loc.search_size);
    maybe_get(l, "template_size", c.loc.template_size);
    maybe_get(l, "enc_channels", c.loc.enc_channels);
    maybe_get(l, "enc_stride", c.loc.enc_stride);
    maybe_get(l, "d_model", c.loc.d_model);
    maybe_get(l, "heads", c.loc.heads);
    maybe_get(l, "enc_layers", c.loc.enc_layers);
    maybe_get(l, "dec_layers", c.loc.dec_layers);
    maybe_get(l, "d_ff", c.loc.d_ff);
    maybe_get(l, "max_templates", c.loc.max_templates);
    maybe_get(l, "shared_template_pos", c.loc.shared_template_pos);
    maybe_get(l, "sigma", c.loc.sigma);
  }
  if (j.contains("flow")) {
    const json& f = j["flow"];
    maybe_get(f, "stride", c.flow.stride);
    maybe_get(f, "feat_dim", c.flow.feat_dim);
    maybe_get(f, "gru_iters", c.flow.gru_iters);
    maybe_get(f, "lookup_radius", c.flow.lookup_radius);
    maybe_get(f, "hidden_dim", c.flow.hidden_dim);
    maybe_get(f, "motion_dim", c.flow.motion_dim);
    maybe_get(f, "scale_by_sqrt_df", c.flow.scale_by_sqrt_df);
    maybe_get(f, "heatmap_sigma", c.flow.heatmap_sigma);
    maybe_get(f, "crop_margin", c.flow.crop_margin);
  }
  maybe_get(j, "alpha", c.alpha);
  maybe_get(j, "tau_m", c.tau_m);
  maybe_get(j, "refiner_channels", c.refiner_channels);
  maybe_get(j, "update_interval", c.update_interval);
  maybe_get(j, "conf_threshold", c.conf_threshold);
  maybe_get(j, "use_flow", c.use_flow);
  maybe_get(j, "use_multitask", c.use_multitask);
  maybe_get(j, "use_multi_templates", c.use_multi_templates);
}

void train_config_from_json(const json& j, TrainConfig& t) {
  maybe_get(j, "epochs", t.epochs);
  maybe_get(j, "learning_rate", t.learning_rate);
  maybe_get(j, "batch_size", t.batch_size);
  maybe_get(j, "optimizer", t.optimizer);
  maybe_get(j, "momentum", t.momentum);
  maybe_get(j, "max_steps", t.max_steps);
  maybe_get(j, "flow_crop", t.flow_crop);
}

CliConfig load_cli_config(const std::string& path, bool paper_scale) {
  CliConfig c;
  if (paper_scale) {
    c.tracker.loc.search_size = 160;
    c.tracker.loc.template_size = 64;
  }
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config file not found: " + path);
    json j = json::parse(in);
    tracker_config_from_json(j, c.tracker);
    if (j.contains("train")) train_config_from_json(j["train"], c.train);
  }
  return c;
}

std::vector<SequenceRecord> load_dataset(const std::string& dir) {
  std::vector<SequenceRecord> out;
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "seq.json")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) out.push_back(load_sequence(d.string()));
  if (out.empty() && fs::exists(fs::path(dir) / "seq.json"))
    out.push_back(load_sequence(dir));
  if (out.empty()) throw std::runtime_error("no sequences under " + dir);
  return out;
}

Tracker make_tracker(const CliConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  return Tracker(cfg.tracker, rng);
}

void save_tracker_checkpoint(const Tracker& trk, const std::string& path) {
  save_checkpoint(path, tracker_config_to_json(trk.config()).dump(), trk.params());
}

Tracker load_tracker_checkpoint(const std::string& path, CliConfig cfg,
                                std::uint64_t seed) {
  json j = json::parse(read_checkpoint_config(path));
  tracker_config_from_json(j, cfg.tracker);
  Tracker trk = make_tracker(cfg, seed);
  nn::ParamMap pm = trk.params();
  load_checkpoint(path, pm);
  return trk;
}

// Simple grayscale overlay: mask contour brightened, predicted tip drawn as a
// cross, ground truth (when present) as a small square outline.
void write_overlay(const Frame& fr, const PredictionRecord& rec,
                   const std::string& path) {
  Image img = fr.image;
  auto put = [&](int x, int y, double v) {
    if (x >= 0 && x < img.w && y >= 0 && y < img.h)
      img.px[static_cast<std::size_t>(y) * img.w + x] = v;
  };
  if (fr.mask_gt)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        if (fr.mask_gt->px[static_cast<std::size_t>(y) * img.w + x] > 0.5)
          put(x, y, std::min(1.0, img.px[static_cast<std::size_t>(y) * img.w + x] + 0.25));
  const int cx = static_cast<int>(std::lround(rec.tip_final.u));
  const int cy = static_cast<int>(std::lround(rec.tip_final.v));
  for (int d = -4; d <= 4; ++d) {
    put(cx + d, cy, 1.0);
    put(cx, cy + d, 1.0);
  }
  if (fr.tip_gt) {
    const int gx = static_cast<int>(std::lround(fr.tip_gt->u));
    const int gy = static_cast<int>(std::lround(fr.tip_gt->v));
    for (int d = -3; d <= 3; ++d) {
      put(gx + d, gy - 3, 0.0);
      put(gx + d, gy + 3, 0.0);
      put(gx - 3, gy + d, 0.0);
      put(gx + 3, gy + d, 0.0);
    }
  }
  write_pgm(img, path);
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_generate(std::uint64_t seed, const std::string& out_dir,
                 const std::string& scenario, int count, int frames, int size) {
  fs::create_directories(out_dir);
  for (int i = 0; i < count; ++i) {
    SequenceRecord rec = generate_sequence(seed + static_cast<std::uint64_t>(i),
                                           frames, scenario,
                                           MotionModel::typical(), size);
    char name[32];
    std::snprintf(name, sizeof(name), "seq_%03d", i);
    const std::string dir = (fs::path(out_dir) / name).string();
    save_sequence(rec, dir);
    std::cout << dir << "\n";
  }
  return 0;
}

int cmd_train_flow(const CliConfig& base, std::uint64_t seed,
                   const std::string& data_dir, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::vector<SequenceRecord> data = load_dataset(data_dir);
  CliConfig cfg = base;
  cfg.train.seed = seed;
  Rng rng(seed);
  FlowEstimator flow(cfg.tracker.flow, rng);
  LossCurve curve = train_flow_phase(flow, data, cfg.train);
  const std::string ckpt = (fs::path(out_dir) / "flow.ckpt").string();
  const std::string loss_csv = (fs::path(out_dir) / "flow_loss.csv").string();
  save_checkpoint(ckpt, tracker_config_to_json(cfg.tracker).dump(), flow.params());
  curve.save_csv(loss_csv);
  std::cout << ckpt << "\n" << loss_csv << "\n";
  return 0;
}

int cmd_train(const CliConfig& base, std::uint64_t seed,
              const std::string& data_dir, const std::string& out_dir,
              const std::string& flow_ckpt) {
  fs::create_directories(out_dir);
  std::vector<SequenceRecord> data = load_dataset(data_dir);
  CliConfig cfg = base;
  cfg.train.seed = seed;
  cfg.train.multitask = cfg.tracker.use_multitask;
  cfg.train.flow = cfg.tracker.use_flow;
  cfg.train.multi_templates = cfg.tracker.use_multi_templates;
  Tracker trk = make_tracker(cfg, seed);
  if (!flow_ckpt.empty()) {
    nn::ParamMap fp = trk.flow().params();
    load_checkpoint(flow_ckpt, fp);
  }
  LossCurve curve = train_end2end_phase(trk, data, cfg.train);
  const std::string ckpt = (fs::path(out_dir) / "tracker.ckpt").string();
  const std::string loss_csv = (fs::path(out_dir) / "train_loss.csv").string();
  save_tracker_checkpoint(trk, ckpt);
  curve.save_csv(loss_csv);
  std::cout << ckpt << "\n" << loss_csv << "\n";
  return 0;
}

int cmd_track(const CliConfig& base, std::uint64_t seed,
              const std::string& ckpt, const std::string& seq_dir,
              const std::string& out_dir, bool overlay) {
  fs::create_directories(out_dir);
  Tracker trk = load_tracker_checkpoint(ckpt, base, seed);
  SequenceRecord rec = load_sequence(seq_dir);
  std::vector<PredictionRecord> preds = trk.track_sequence(rec);
  const std::string csv = (fs::path(out_dir) / "predictions.csv").string();
  write_prediction_csv(preds, csv);
  std::cout << csv << "\n";
  if (overlay) {
    const std::string odir = (fs::path(out_dir) / "overlays").string();
    fs::create_directories(odir);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "%05zu.pgm", i);
      write_overlay(rec.frames[i], preds[i], (fs::path(odir) / name).string());
    }
    std::cout << odir << "\n";
  }
  return 0;
}

int cmd_eval(const CliConfig& base, std::uint64_t seed, const std::string& ckpt,
             const std::string& data_dir, const std::string& out_dir,
             const std::string& scenario, double spacing_mm) {
  fs::create_directories(out_dir);
  Tracker trk = load_tracker_checkpoint(ckpt, base, seed);
  std::vector<SequenceRecord> data = load_dataset(data_dir);
  std::vector<std::vector<PredictionRecord>> preds;
  preds.reserve(data.size());
  for (const auto& rec : data) preds.push_back(trk.track_sequence(rec));
  EvalConfig ec;
  ec.scenario_filter = scenario;
  ec.pixel_spacing_mm = spacing_mm;
  MetricsReport rep = evaluate(preds, data, ec);
  const std::string jpath = (fs::path(out_dir) / "metrics.json").string();
  const std::string cpath = (fs::path(out_dir) / "metrics.csv").string();
  std::ofstream(jpath) << rep.to_json() << "\n";
  {
    std::ofstream c(cpath);
    c << "scenario,median_mm,mean_mm,std_mm,n_frames\n";
    for (const auto& r : rep.rows) {
      char line[160];
      std::snprintf(line, sizeof(line), "%s,%.3f,%.3f,%.3f,%ld\n",
                    r.scenario.c_str(), r.median_mm, r.mean_mm, r.std_mm,
                    r.n_frames);
      c << line;
    }
  }
  std::cout << rep.format_table() << jpath << "\n" << cpath << "\n";
  return 0;
}

int cmd_ablate(const CliConfig& base, std::uint64_t seed,
               const std::string& ckpt_dir, const std::string& data_dir,
               const std::string& out_dir, double spacing_mm) {
  fs::create_directories(out_dir);
  std::vector<SequenceRecord> data = load_dataset(data_dir);
  struct Row {
    const char* name;
    bool multi_templates, multitask, flow;
  };
  // Toggle rows in the ablation-table layout: each row removes one more
  // component; the last row is the full model.
  const Row rows[] = {{"none", false, false, false},
                      {"templates", true, false, false},
                      {"templates+mask", true, true, false},
                      {"full", true, true, true}};
  const std::string csv = (fs::path(out_dir) / "ablation.csv").string();
  std::ofstream c(csv);
  c << "row,multi_templates,multitask,flow,scenario,median_mm,mean_mm,std_mm\n";
  for (const Row& row : rows) {
    const std::string ckpt =
        (fs::path(ckpt_dir) / (std::string("ablate_") + row.name + ".ckpt")).string();
    if (!fs::exists(ckpt))
      throw std::runtime_error("missing checkpoint: " + ckpt);
    CliConfig cfg = base;
    Tracker trk = load_tracker_checkpoint(ckpt, cfg, seed);
    // Inference toggles mirror the row regardless of how it was trained.
    TrackerConfig tc = trk.config();
    tc.use_multi_templates = row.multi_templates;
    tc.use_multitask = row.multitask;
    tc.use_flow = row.flow;
    Rng rng(seed);
    Tracker run(tc, rng);
    nn::ParamMap pm = run.params();
    load_checkpoint(ckpt, pm);
    std::vector<std::vector<PredictionRecord>> preds;
    for (const auto& rec : data) preds.push_back(run.track_sequence(rec));
    EvalConfig ec;
    ec.pixel_spacing_mm = spacing_mm;
    MetricsReport rep = evaluate(preds, data, ec);
    for (const auto& r : rep.rows) {
      char line[200];
      std::snprintf(line, sizeof(line), "%s,%d,%d,%d,%s,%.3f,%.3f,%.3f\n",
                    row.name, row.multi_templates ? 1 : 0, row.multitask ? 1 : 0,
                    row.flow ? 1 : 0, r.scenario.c_str(), r.median_mm, r.mean_mm,
                    r.std_mm);
      c << line;
    }
  }
  std::cout << csv << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// selftest: fast invariant suite over every module; exits nonzero on failure.

int cmd_selftest(std::uint64_t seed) {
  int failures = 0;
  auto check = [&](const char* name, bool ok) {
    std::cout << (ok ? "ok   " : "FAIL ") << name << "\n";
    if (!ok) ++failures;
  };
  auto guarded = [&](const char* name, const std::function<bool()>& fn) {
    bool ok = false;
    try {
      ok = fn();
    } catch (const std::exception& e) {
      std::cout << "     (" << e.what() << ")\n";
    }
    check(name, ok);
  };

  guarded("tensor: matmul gradient vs finite differences", [&] {
    Rng rng(seed);
    Tensor b = Tensor::randn({4, 2}, rng);
    std::vector<double> vals(12);
    for (auto& v : vals) v = rng.uniform(-1, 1);
    Tensor a = Tensor::param({3, 4}, vals);
    auto fwd = [&] { return sum(mul(matmul(a, b), matmul(a, b))); };
    {
      GradTape tape;
      Tensor loss = fwd();
      tape.backward(loss);
    }
    std::vector<double> g = a.grad();
    double worst = 0.0;
    for (int i = 0; i < 12; ++i) {
      const double eps = 1e-6, keep = a.data()[i];
      a.data()[i] = keep + eps;
      const double fp = fwd().item();
      a.data()[i] = keep - eps;
      const double fm = fwd().item();
      a.data()[i] = keep;
      const double fd = (fp - fm) / (2 * eps);
      worst = std::max(worst, std::abs(fd - g[i]) /
                                  std::max({std::abs(fd), std::abs(g[i]), 1e-8}));
    }
    return worst < 1e-3;
  });

  guarded("synthcath: determinism and tip-on-mask", [&] {
    SequenceRecord a = generate_sequence(seed, 4, "fluoro", MotionModel::typical(), 64);
    SequenceRecord b = generate_sequence(seed, 4, "fluoro", MotionModel::typical(), 64);
    for (std::size_t i = 0; i < a.frames.size(); ++i)
      if (a.frames[i].image.px != b.frames[i].image.px) return false;
    for (const auto& f : a.frames) {
      if (!f.tip_gt || !f.mask_gt) return false;
      double best = 1e9;
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
          if (f.mask_gt->px[static_cast<std::size_t>(y) * 64 + x] > 0.5)
            best = std::min(best, std::hypot(x - f.tip_gt->u, y - f.tip_gt->v));
      if (best > 1.0) return false;
    }
    return true;
  });

  guarded("localizer: attention rows sum to 1", [&] {
    Rng rng(seed);
    nn::MultiHeadAttention mha(8, 2, rng);
    Tensor q = Tensor::randn({5, 8}, rng);
    std::vector<Tensor> attn;
    mha.forward(q, q, &attn);
    double worst = 0.0;
    for (const Tensor& att : attn) {
      const int rows = att.dim(0), cols = att.dim(1);
      for (int r = 0; r < rows; ++r) {
        double s = 0.0;
        for (int c = 0; c < cols; ++c)
          s += att.data()[static_cast<std::size_t>(r) * cols + c];
        worst = std::max(worst, std::abs(s - 1.0));
      }
    }
    return !attn.empty() && worst < 1e-9;
  });

  guarded("flow: Eq.-style correlation matches loop oracle", [&] {
    Rng rng(seed);
    Tensor fa = Tensor::randn({3, 4, 4}, rng), fb = Tensor::randn({3, 4, 4}, rng);
    CorrelationPyramid pyr = correlation_volume(fa, fb, false);
    double worst = 0.0;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        for (int k = 0; k < 4; ++k)
          for (int l = 0; l < 4; ++l) {
            double dot = 0.0;
            for (int c = 0; c < 3; ++c)
              dot += fa.at({c, i, j}) * fb.at({c, k, l});
            worst = std::max(worst, std::abs(pyr.levels[0].at({i * 4 + j, k, l}) - dot));
          }
    return worst < 1e-12;
  });

  guarded("fusion: published-branch fixture 2.1", [&] {
    Tensor xs = Tensor::from_data({1, 1}, {0.8});
    Tensor xf = Tensor::from_data({1, 1}, {0.6});
    Tensor m = Tensor::from_data({1, 1}, {1.0});
    ScoreMap sm = fuse_score(xs, xf, m, 0.5, 0.5);
    return std::abs(sm.fused.item() - 2.1) < 1e-12;
  });

  guarded("flow: zero-flow warp identity", [&] {
    Rng rng(seed);
    Tensor m = Tensor::randn({16, 16}, rng);
    Tensor w = warp_by_flow(m, uniform_flow(16, 16, 0.0, 0.0));
    for (std::size_t i = 0; i < m.size(); ++i)
      if (std::abs(m.data()[i] - w.data()[i]) > 1e-12) return false;
    WarpedTip wt = warp_point({5.0, 7.0}, uniform_flow(16, 16, 2.0, 3.0), 2.0);
    return std::abs(wt.point.u - 7.0) < 1e-12 && std::abs(wt.point.v - 10.0) < 1e-12;
  });

  guarded("eval: offset-(3,4) distance is 1.540 mm", [&] {
    SequenceRecord rec = generate_sequence(seed, 3, "fluoro", MotionModel::typical(), 64);
    std::vector<PredictionRecord> preds(rec.frames.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
      preds[i].frame_index = static_cast<int>(i);
      preds[i].tip_final = {rec.frames[i].tip_gt->u + 3.0, rec.frames[i].tip_gt->v + 4.0};
    }
    std::vector<double> d = sequence_distances_mm(preds, rec, 0.308);
    for (double v : d)
      if (std::abs(v - 1.540) > 1e-9) return false;
    return !d.empty();
  });

  guarded("tracker: deterministic two-run tracking", [&] {
    TrackerConfig cfg;
    cfg.loc.search_size = 32;
    cfg.loc.template_size = 16;
    cfg.loc.enc_channels = 8;
    cfg.loc.d_model = 8;
    cfg.loc.heads = 2;
    cfg.loc.d_ff = 16;
    cfg.flow.feat_dim = 8;
    cfg.flow.hidden_dim = 8;
    cfg.flow.motion_dim = 8;
    cfg.flow.lookup_radius = 1;
    cfg.flow.gru_iters = 2;
    SequenceRecord rec = generate_sequence(seed, 3, "fluoro", MotionModel::typical(), 64);
    Rng r1(seed), r2(seed);
    Tracker t1(cfg, r1), t2(cfg, r2);
    auto p1 = t1.track_sequence(rec), p2 = t2.track_sequence(rec);
    if (p1.size() != p2.size()) return false;
    for (std::size_t i = 0; i < p1.size(); ++i)
      if (p1[i].tip_final.u != p2[i].tip_final.u ||
          p1[i].tip_final.v != p2[i].tip_final.v ||
          p1[i].confidence != p2[i].confidence)
        return false;
    return true;
  });

  std::cout << (failures == 0 ? "selftest passed" : "selftest FAILED") << "\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contrack: catheter-tip tracking on synthetic fluoroscopy"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", data_dir, scenario = "fluoro";
  std::uint64_t seed = 0;
  bool paper_scale = false, overlay = false;
  app.add_option("--config", config_path, "JSON config with hyperparameters");
  app.add_option("--seed", seed, "RNG seed");
  app.add_option("--out-dir", out_dir, "output directory");
  app.add_flag("--paper-scale", paper_scale,
               "160x160 search / 64x64 templates instead of desk-scale 96/48");

  auto* gen = app.add_subcommand("generate", "synthesize annotated sequences");
  int gen_count = 4, gen_frames = 10, gen_size = 128;
  gen->add_option("--scenario", scenario, "fluoro|angio|devices");
  gen->add_option("--count", gen_count, "number of sequences");
  gen->add_option("--frames", gen_frames, "frames per sequence");
  gen->add_option("--size", gen_size, "image side (power of two)");

  auto* tf = app.add_subcommand("train-flow", "train the flow module");
  tf->add_option("--data-dir", data_dir, "directory of generated sequences")->required();

  auto* tr = app.add_subcommand("train", "end-to-end localizer training");
  std::string flow_ckpt;
  tr->add_option("--data-dir", data_dir, "directory of generated sequences")->required();
  tr->add_option("--flow-checkpoint", flow_ckpt, "pre-trained flow weights");

  auto* tk = app.add_subcommand("track", "track one sequence");
  std::string ckpt, seq_dir;
  tk->add_option("--checkpoint", ckpt, "tracker checkpoint")->required();
  tk->add_option("--sequence", seq_dir, "sequence directory")->required();
  tk->add_flag("--overlay", overlay, "write overlay images");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  double spacing_mm = 0.308;
  ev->add_option("--checkpoint", ckpt, "tracker checkpoint")->required();
  ev->add_option("--data-dir", data_dir, "directory of sequences")->required();
  ev->add_option("--scenario", scenario, "fluoro|angio|devices|all");
  ev->add_option("--pixel-spacing-mm", spacing_mm, "pixel spacing in mm");

  auto* ab = app.add_subcommand("ablate", "toggle-row ablation table");
  std::string ckpt_dir;
  ab->add_option("--checkpoint-dir", ckpt_dir,
                 "directory with ablate_<row>.ckpt files")->required();
  ab->add_option("--data-dir", data_dir, "directory of sequences")->required();
  ab->add_option("--pixel-spacing-mm", spacing_mm, "pixel spacing in mm");

  auto* st = app.add_subcommand("selftest", "run the built-in invariant suite");
  (void)st;

  // Let global flags (--seed, --out-dir, ...) appear after the subcommand.
  for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    CliConfig cfg = load_cli_config(config_path, paper_scale);
    if (gen->parsed())
      return cmd_generate(seed, out_dir, scenario, gen_count, gen_frames, gen_size);
    if (tf->parsed()) return cmd_train_flow(cfg, seed, data_dir, out_dir);
    if (tr->parsed()) return cmd_train(cfg, seed, data_dir, out_dir, flow_ckpt);
    if (tk->parsed()) return cmd_track(cfg, seed, ckpt, seq_dir, out_dir, overlay);
    if (ev->parsed())
      return cmd_eval(cfg, seed, ckpt, data_dir, out_dir, scenario, spacing_mm);
    if (ab->parsed())
      return cmd_ablate(cfg, seed, ckpt_dir, data_dir, out_dir, spacing_mm);
    if (st->parsed()) return cmd_selftest(seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
