#include "heightformer/metrics.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>

#include "heightformer/errors.hpp"

namespace heightformer {

void LossConfig::validate() const {
  if (alpha <= 0.0) throw UsageError("loss: alpha must be > 0");
  if (lambda < 0.0 || lambda > 1.0) throw UsageError("loss: lambda must be in [0, 1]");
}

namespace {

void check_raster_pair(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  if (!pred.same_shape(gt) || !pred.same_shape(mask))
    throw ShapeError("metrics: pred/gt/mask shapes differ");
}

int64_t mask_count(const Tensor& mask) {
  int64_t n = 0;
  for (int64_t i = 0; i < mask.numel(); ++i)
    if (mask[i] > 0.5) ++n;
  return n;
}

Tensor masked_log_const(const Tensor& x, const Tensor& mask) {
  Tensor out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) {
    if (mask[i] > 0.5) {
      if (x[i] <= 0.0) throw NumericError("silog: non-positive ground-truth height at a valid pixel");
      out[i] = -std::log(x[i]);
    }
  }
  return out;
}

}  // namespace

Var silog_loss_pooled(Tape& t, const std::vector<Var>& preds, const std::vector<Tensor>& gts,
                      const std::vector<Tensor>& masks, const LossConfig& cfg) {
  cfg.validate();
  if (preds.empty() || preds.size() != gts.size() || preds.size() != masks.size())
    throw ShapeError("silog: mismatched batch lists");
  int64_t total = 0;
  Var s1, s2;
  for (size_t i = 0; i < preds.size(); ++i) {
    check_raster_pair(preds[i].val(), gts[i], masks[i]);
    total += mask_count(masks[i]);
    // g = log(pred) - log(gt) on valid pixels, 0 elsewhere
    Var g = add_const(vlog_masked(preds[i], masks[i]), masked_log_const(gts[i], masks[i]));
    g = mul_const(g, masks[i]);
    Var s1i = sum_all(g);
    Var s2i = sum_all(mul(g, g));
    s1 = s1.defined() ? add(s1, s1i) : s1i;
    s2 = s2.defined() ? add(s2, s2i) : s2i;
  }
  if (total == 0) throw DataError("silog: empty valid mask");
  const double inv_t = 1.0 / static_cast<double>(total);
  Var arg = sub(scale(s2, inv_t), scale(mul(s1, s1), cfg.lambda * inv_t * inv_t));
  // guards against tiny negative rounding residue when the variance term cancels
  return scale(vsqrt(relu(arg)), cfg.alpha);
}

Var silog_loss(Tape& t, Var pred, const Tensor& gt, const Tensor& mask, const LossConfig& cfg) {
  return silog_loss_pooled(t, {pred}, {gt}, {mask}, cfg);
}

double silog_value(const Tensor& pred, const Tensor& gt, const Tensor& mask, const LossConfig& cfg) {
  Tape t;
  t.set_grad_enabled(false);
  return silog_loss(t, t.input(pred), gt, mask, cfg).val()[0];
}

double rel_error(const Tensor& pred, const Tensor& gt, const Tensor& mask, double eps, int64_t* excluded) {
  check_raster_pair(pred, gt, mask);
  if (mask_count(mask) == 0) throw DataError("rel: empty valid mask");
  double sum = 0.0;
  int64_t n = 0, skipped = 0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    if (mask[i] <= 0.5) continue;
    if (gt[i] <= eps) {
      ++skipped;
      continue;
    }
    sum += std::abs((pred[i] - gt[i]) / gt[i]);
    ++n;
  }
  if (skipped > 0)
    std::fprintf(stderr, "warning: rel: %" PRId64 " pixels with gt <= eps excluded\n", skipped);
  if (excluded) *excluded = skipped;
  if (n == 0) throw DataError("rel: no usable pixels after exclusions");
  return sum / static_cast<double>(n);
}

double rmse_log(const Tensor& pred, const Tensor& gt, const Tensor& mask, RmseMode mode, double eps) {
  check_raster_pair(pred, gt, mask);
  if (mask_count(mask) == 0) throw DataError("rmse: empty valid mask");
  double sum = 0.0;
  int64_t n = 0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    if (mask[i] <= 0.5 || gt[i] <= eps) continue;
    double d;
    if (mode == RmseMode::Log) {
      if (pred[i] <= 0.0) throw NumericError("rmse(log): non-positive prediction at a valid pixel");
      d = std::log(pred[i]) - std::log(gt[i]);
    } else {
      d = pred[i] - gt[i];
    }
    sum += d * d;
    ++n;
  }
  if (n == 0) throw DataError("rmse: no usable pixels after exclusions");
  return std::sqrt(sum / static_cast<double>(n));
}

double delta_acc(const Tensor& pred, const Tensor& gt, const Tensor& mask, int i, double eps) {
  check_raster_pair(pred, gt, mask);
  if (i < 1) throw UsageError("delta_acc: threshold index must be >= 1");
  if (mask_count(mask) == 0) throw DataError("delta: empty valid mask");
  const double thresh = std::pow(1.25, i);
  int64_t hits = 0, n = 0;
  for (int64_t p = 0; p < pred.numel(); ++p) {
    if (mask[p] <= 0.5 || gt[p] <= eps) continue;
    ++n;
    if (pred[p] <= eps) continue;  // unbounded ratio, fails every threshold
    const double ratio = std::max(pred[p] / gt[p], gt[p] / pred[p]);
    if (ratio < thresh) ++hits;
  }
  if (n == 0) throw DataError("delta: no usable pixels after exclusions");
  return static_cast<double>(hits) / static_cast<double>(n);
}

namespace {

struct Accum {
  double rel_sum = 0, sq_log_sum = 0, sq_lit_sum = 0;
  int64_t d1 = 0, d2 = 0, d3 = 0;
  int64_t counted = 0, valid = 0, excluded = 0;

  void add_pixel(double p, double g, double eps) {
    ++valid;
    if (g <= eps) {
      ++excluded;
      return;
    }
    ++counted;
    const double d = p - g;
    sq_lit_sum += d * d;
    const double pc = std::max(p, eps);
    const double dl = std::log(pc) - std::log(g);
    sq_log_sum += dl * dl;
    rel_sum += std::abs(d) / g;
    if (p > eps) {
      const double ratio = std::max(pc / g, g / pc);
      if (ratio < 1.25) ++d1;
      if (ratio < 1.5625) ++d2;
      if (ratio < 1.953125) ++d3;
    }
  }

  void fill(TileMetrics& m) const {
    m.valid_pixels = valid;
    m.excluded_pixels = excluded;
    if (counted == 0) return;
    const double n = static_cast<double>(counted);
    m.rel = rel_sum / n;
    m.rmse_log_literal = std::sqrt(sq_lit_sum / n);
    m.rmse_log = std::sqrt(sq_log_sum / n);
    m.delta1 = static_cast<double>(d1) / n;
    m.delta2 = static_cast<double>(d2) / n;
    m.delta3 = static_cast<double>(d3) / n;
  }
};

}  // namespace

MetricsReport evaluate(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts,
                       const std::vector<Tensor>& masks, double h_min, double offset_m, double eps,
                       const std::vector<std::string>* names) {
  if (preds.size() != gts.size() || preds.size() != masks.size())
    throw DataError("evaluate: pred/gt/mask set sizes differ");
  if (preds.empty()) throw DataError("evaluate: empty tile set");
  if (names && names->size() != preds.size()) throw DataError("evaluate: name list size mismatch");

  MetricsReport rep;
  rep.offset_m = offset_m;
  const double shift = offset_m - h_min;
  Accum pooled;
  for (size_t k = 0; k < preds.size(); ++k) {
    check_raster_pair(preds[k], gts[k], masks[k]);
    Accum tile;
    for (int64_t i = 0; i < preds[k].numel(); ++i) {
      if (masks[k][i] <= 0.5) continue;
      const double p = preds[k][i] + shift;
      const double g = gts[k][i] + shift;
      tile.add_pixel(p, g, eps);
      pooled.add_pixel(p, g, eps);
    }
    TileMetrics tm;
    tm.name = names ? (*names)[k] : "tile" + std::to_string(k);
    tile.fill(tm);
    rep.per_tile.push_back(tm);
  }
  if (pooled.counted == 0) throw DataError("evaluate: no usable pixels");
  TileMetrics pooled_m;
  pooled.fill(pooled_m);
  rep.rel = pooled_m.rel;
  rep.rmse_log_literal = pooled_m.rmse_log_literal;
  rep.rmse_log = pooled_m.rmse_log;
  rep.delta1 = pooled_m.delta1;
  rep.delta2 = pooled_m.delta2;
  rep.delta3 = pooled_m.delta3;
  rep.valid_pixels = pooled.valid;
  rep.excluded_pixels = pooled.excluded;

  TileMetrics& mean = rep.tile_mean;
  mean.name = "tile_mean";
  for (const TileMetrics& tm : rep.per_tile) {
    mean.rel += tm.rel;
    mean.rmse_log_literal += tm.rmse_log_literal;
    mean.rmse_log += tm.rmse_log;
    mean.delta1 += tm.delta1;
    mean.delta2 += tm.delta2;
    mean.delta3 += tm.delta3;
  }
  const double nt = static_cast<double>(rep.per_tile.size());
  mean.rel /= nt;
  mean.rmse_log_literal /= nt;
  mean.rmse_log /= nt;
  mean.delta1 /= nt;
  mean.delta2 /= nt;
  mean.delta3 /= nt;
  return rep;
}

namespace {

std::string g6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

void append_metric_fields(std::string& s, const TileMetrics& m) {
  s += "\"rel\": " + g6(m.rel) + ", ";
  s += "\"rmse_log_literal\": " + g6(m.rmse_log_literal) + ", ";
  s += "\"rmse_log\": " + g6(m.rmse_log) + ", ";
  s += "\"delta1\": " + g6(m.delta1) + ", ";
  s += "\"delta2\": " + g6(m.delta2) + ", ";
  s += "\"delta3\": " + g6(m.delta3) + ", ";
  s += "\"valid_pixels\": " + std::to_string(m.valid_pixels) + ", ";
  s += "\"excluded_pixels\": " + std::to_string(m.excluded_pixels);
}

}  // namespace

std::string metrics_json(const MetricsReport& r) {
  std::string s = "{\n  ";
  s += "\"rel\": " + g6(r.rel) + ", ";
  s += "\"rmse_log_literal\": " + g6(r.rmse_log_literal) + ", ";
  s += "\"rmse_log\": " + g6(r.rmse_log) + ",\n  ";
  s += "\"delta1\": " + g6(r.delta1) + ", ";
  s += "\"delta2\": " + g6(r.delta2) + ", ";
  s += "\"delta3\": " + g6(r.delta3) + ",\n  ";
  s += "\"valid_pixels\": " + std::to_string(r.valid_pixels) + ", ";
  s += "\"excluded_pixels\": " + std::to_string(r.excluded_pixels) + ", ";
  s += "\"offset_m\": " + g6(r.offset_m) + ",\n  ";
  s += "\"aggregation\": \"pooled_pixels\",\n  ";
  s += "\"tile_mean\": {";
  append_metric_fields(s, r.tile_mean);
  s += "},\n  \"per_tile\": [\n";
  for (size_t i = 0; i < r.per_tile.size(); ++i) {
    s += "    {\"name\": \"" + r.per_tile[i].name + "\", ";
    append_metric_fields(s, r.per_tile[i]);
    s += i + 1 < r.per_tile.size() ? "},\n" : "}\n";
  }
  s += "  ]\n}\n";
  return s;
}

std::string metrics_table(const MetricsReport& r) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-16s %10s %10s %10s %8s %8s %8s %12s %10s\n", "tile", "rel",
                "rmse_lit", "rmse_log", "d1", "d2", "d3", "valid_px", "excluded");
  os << line;
  auto row = [&](const TileMetrics& m) {
    std::snprintf(line, sizeof(line), "%-16s %10.6g %10.6g %10.6g %8.4f %8.4f %8.4f %12" PRId64 " %10" PRId64 "\n",
                  m.name.c_str(), m.rel, m.rmse_log_literal, m.rmse_log, m.delta1, m.delta2, m.delta3,
                  m.valid_pixels, m.excluded_pixels);
    os << line;
  };
  for (const TileMetrics& m : r.per_tile) row(m);
  row(r.tile_mean);
  TileMetrics pooled;
  pooled.name = "pooled";
  pooled.rel = r.rel;
  pooled.rmse_log_literal = r.rmse_log_literal;
  pooled.rmse_log = r.rmse_log;
  pooled.delta1 = r.delta1;
  pooled.delta2 = r.delta2;
  pooled.delta3 = r.delta3;
  pooled.valid_pixels = r.valid_pixels;
  pooled.excluded_pixels = r.excluded_pixels;
  row(pooled);
  return os.str();
}

}  // namespace heightformer
