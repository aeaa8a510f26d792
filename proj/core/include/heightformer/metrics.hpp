#pragma once

#include <string>
#include <vector>

#include "heightformer/autograd.hpp"

namespace heightformer {

struct LossConfig {
  double alpha = 10.0;
  double lambda = 0.85;
  void validate() const;
};

// Scale-invariant log loss over masked pixels, differentiable in pred.
// pred and gt must be strictly positive wherever mask is set.
Var silog_loss(Tape& t, Var pred, const Tensor& gt, const Tensor& mask, const LossConfig& cfg);

// Batch variant: residual sums and the pixel count are pooled across all
// rasters before the final square root.
Var silog_loss_pooled(Tape& t, const std::vector<Var>& preds, const std::vector<Tensor>& gts,
                      const std::vector<Tensor>& masks, const LossConfig& cfg);

// Value-only convenience for tests and validation passes.
double silog_value(const Tensor& pred, const Tensor& gt, const Tensor& mask, const LossConfig& cfg);

enum class RmseMode { Log, Literal };

// Mean absolute relative error over masked pixels with gt > eps. Pixels at
// or below eps are excluded from the mean and reported via `excluded`.
double rel_error(const Tensor& pred, const Tensor& gt, const Tensor& mask, double eps = 1e-6,
                 int64_t* excluded = nullptr);

// Root-mean-square error over masked pixels with gt > eps. Log mode uses
// log residuals and throws on non-positive pred; Literal uses raw residuals.
double rmse_log(const Tensor& pred, const Tensor& gt, const Tensor& mask, RmseMode mode = RmseMode::Log,
                double eps = 1e-6);

// Fraction of masked pixels (gt > eps) with max(pred/gt, gt/pred) < 1.25^i.
// Pixels with pred <= eps count as failing.
double delta_acc(const Tensor& pred, const Tensor& gt, const Tensor& mask, int i, double eps = 1e-6);

struct TileMetrics {
  std::string name;
  double rel = 0, rmse_log_literal = 0, rmse_log = 0;
  double delta1 = 0, delta2 = 0, delta3 = 0;
  int64_t valid_pixels = 0, excluded_pixels = 0;
};

struct MetricsReport {
  // pooled over every counted pixel of every tile
  double rel = 0, rmse_log_literal = 0, rmse_log = 0;
  double delta1 = 0, delta2 = 0, delta3 = 0;
  int64_t valid_pixels = 0, excluded_pixels = 0;
  double offset_m = 1.0;
  // secondary aggregation: unweighted mean of the per-tile metrics
  TileMetrics tile_mean;
  std::vector<TileMetrics> per_tile;
};

// Pools pixels across tiles (primary) and also reports per-tile metrics.
// Heights are shifted by (offset_m - h_min) before ratios/logs so the
// smallest in-range value maps to offset_m; predictions are clamped to eps
// for the log/ratio terms instead of throwing.
MetricsReport evaluate(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts,
                       const std::vector<Tensor>& masks, double h_min, double offset_m = 1.0,
                       double eps = 1e-6, const std::vector<std::string>* names = nullptr);

// Stable-order JSON with floats at 6 significant digits; byte-identical for
// identical inputs.
std::string metrics_json(const MetricsReport& r);
std::string metrics_table(const MetricsReport& r);

}  // namespace heightformer
