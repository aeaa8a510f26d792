#pragma once

#include <functional>
#include <string>
#include <vector>

#include "heightformer/checkpoint.hpp"
#include "heightformer/data.hpp"
#include "heightformer/metrics.hpp"
#include "heightformer/model.hpp"

namespace heightformer {

// Linear warmup to base_lr over floor(total*warmup_frac) steps, then linear
// decay to zero at total_steps. Continuous and piecewise linear.
double lr_schedule(int64_t step, int64_t total_steps, double base_lr, double warmup_frac = 0.125);

// Decoupled weight decay; decay is applied to matrices/kernels only, not to
// biases or norm affines.
struct AdamW {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.01;
  int64_t step_count = 0;
  void step(ParamStore& ps, double lr);
};

struct TrainConfig {
  ModelConfig model;
  LossConfig loss;
  AugmentConfig augment;
  bool augment_enabled = true;
  int epochs = 24;
  int batch_size = 2;
  double base_lr = 1e-5;
  double warmup_frac = 0.125;
  double weight_decay = 0.01;
  bool clip_gradients = true;
  double clip_norm = 10.0;
  uint64_t seed = 0;
  int64_t max_steps = 0;  // 0 runs the full epoch schedule
  int tile = 512;
  int log_every = 10;
  int val_every_epochs = 1;
  int checkpoint_every_epochs = 1;
  double eval_offset_m = 1.0;
  std::string data_root;
  std::string train_split, val_split;  // stem-list files; empty = all / none
  std::string out_dir;
  std::string resume_from;
  std::string device = "cpu";
  void validate() const;
};

struct TrainResult {
  std::vector<double> loss_trace;
  std::string final_checkpoint;
  std::string best_checkpoint;
  double best_val_rel = 0.0;
  bool has_val = false;
  MetricsReport final_val;
  int64_t steps = 0;
};

TrainResult train(const TrainConfig& cfg);

// Runs the model on every tile of the set and pools the metrics.
MetricsReport evaluate_model(const HeightFormerModel& model, const std::vector<TilePair>& tiles,
                             double offset_m = 1.0);

// Overlapped tiling with linear feathering. tile_fn maps a tile origin to
// that tile's [tile,tile] prediction; overlapping cells are blended by
// normalized ramp weights.
Tensor stitch_tiles(int64_t rows, int64_t cols, int tile, int overlap,
                    const std::function<Tensor(int64_t, int64_t)>& tile_fn);

struct ScenePrediction {
  Tensor height_m;               // [rows, cols]
  std::vector<Tensor> bin_sets;  // one BinSet per forwarded tile
};
ScenePrediction predict_scene(const HeightFormerModel& model, const ScenePair& scene, int tile,
                              int overlap);

struct ThroughputReport {
  double median_ms = 0.0, p95_ms = 0.0, fps = 0.0;
  int reps = 0;
  int input_size = 0;
  int64_t param_count = 0;
  std::string hardware;
  std::vector<double> samples_ms;
};
// Times gradient-free forwards of [size,size,3] inputs after one warmup pass.
ThroughputReport benchmark_model(const HeightFormerModel& model, int input_size, int reps);
std::string hardware_descriptor();

}  // namespace heightformer
