#include "heightformer/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <thread>

#include "heightformer/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace heightformer {

double lr_schedule(int64_t step, int64_t total_steps, double base_lr, double warmup_frac) {
  if (total_steps < 1) throw UsageError("lr_schedule: total_steps must be >= 1");
  if (step < 0 || step > total_steps) throw UsageError("lr_schedule: step out of range");
  const int64_t warmup = static_cast<int64_t>(total_steps * warmup_frac);
  if (warmup > 0 && step <= warmup)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (total_steps == warmup) return base_lr;
  return base_lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
}

void AdamW::step(ParamStore& ps, double lr) {
  ++step_count;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  for (Param* p : ps.all()) {
    if (!p->trainable || !p->grad.defined()) continue;
    p->ensure_moments();
    double* w = p->value.data();
    const double* g = p->grad.data();
    double* m = p->m.data();
    double* v = p->v.data();
    const bool decay = p->value.ndim() >= 2 && weight_decay > 0.0;
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + eps));
      if (decay) w[i] -= lr * weight_decay * w[i];
    }
  }
}

void TrainConfig::validate() const {
  model.validate();
  loss.validate();
  if (epochs < 1) throw UsageError("train: epochs must be >= 1");
  if (batch_size < 1) throw UsageError("train: batch_size must be >= 1");
  if (base_lr <= 0.0) throw UsageError("train: learning rate must be > 0");
  if (warmup_frac <= 0.0 || warmup_frac >= 1.0) throw UsageError("train: warmup_frac must be in (0,1)");
  if (tile % 32 != 0) throw UsageError("train: tile size must be divisible by 32");
  if (data_root.empty()) throw UsageError("train: data_root is required");
}

namespace {

struct NamedTile {
  TilePair tile;
  std::string name;
};

std::vector<NamedTile> load_tiles(const Dataset& ds, const std::vector<DatasetEntry>& entries, int tile) {
  std::vector<NamedTile> out;
  for (const DatasetEntry& e : entries) {
    TilePair scene = load_entry(ds, e);
    if (scene.rows() < tile || scene.cols() < tile)
      throw DataError("scene " + e.stem + " smaller than the training tile; regenerate or lower train.tile");
    std::vector<TilePair> tiles = crop_grid(scene, tile);
    for (size_t i = 0; i < tiles.size(); ++i)
      out.push_back({std::move(tiles[i]), e.stem + "#" + std::to_string(i)});
  }
  if (out.empty()) throw DataError("training set produced no tiles");
  return out;
}

std::vector<DatasetEntry> select_entries(const Dataset& ds, const std::string& split_file) {
  if (split_file.empty()) return ds.entries;
  return filter_dataset(ds, read_split_list(split_file)).entries;
}

double wall_ms() {
  using namespace std::chrono;
  return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
}

json metrics_to_history_entry(const MetricsReport& r, int64_t step) {
  return json{{"step", step},       {"rel", r.rel},       {"rmse_log", r.rmse_log},
              {"delta1", r.delta1}, {"delta2", r.delta2}, {"delta3", r.delta3}};
}

}  // namespace

MetricsReport evaluate_model(const HeightFormerModel& model, const std::vector<TilePair>& tiles,
                             double offset_m) {
  std::vector<Tensor> preds, gts, masks;
  std::vector<std::string> names;
  for (size_t i = 0; i < tiles.size(); ++i) {
    preds.push_back(model.predict(tiles[i].image).height_m);
    gts.push_back(tiles[i].dsm);
    masks.push_back(tiles[i].mask);
    names.push_back("tile" + std::to_string(i));
  }
  return evaluate(preds, gts, masks, model.config().h_min, offset_m, 1e-6, &names);
}

TrainResult train(const TrainConfig& cfg_in) {
  TrainConfig cfg = cfg_in;
  Dataset ds = scan_dataset(cfg.data_root);
  // "auto" range: inherit the dataset-level normalization range
  if (cfg.model.h_min == cfg.model.h_max) {
    cfg.model.h_min = ds.h_min;
    cfg.model.h_max = ds.h_max;
  }
  cfg.validate();
  if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);

  std::vector<NamedTile> train_tiles = load_tiles(ds, select_entries(ds, cfg.train_split), cfg.tile);
  std::vector<TilePair> val_tiles;
  if (!cfg.val_split.empty()) {
    for (NamedTile& nt : load_tiles(ds, select_entries(ds, cfg.val_split), cfg.tile))
      val_tiles.push_back(std::move(nt.tile));
  }

  std::unique_ptr<HeightFormerModel> model;
  AdamW opt;
  opt.weight_decay = cfg.weight_decay;
  int64_t start_step = 0;
  if (!cfg.resume_from.empty()) {
    CheckpointData ckpt = load_checkpoint(cfg.resume_from);
    model = model_from_checkpoint(ckpt);
    opt.step_count = ckpt.opt_step_count;
    start_step = ckpt.step;
  } else {
    model = std::make_unique<HeightFormerModel>(cfg.model, cfg.seed);
  }

  const int64_t spe = (static_cast<int64_t>(train_tiles.size()) + cfg.batch_size - 1) / cfg.batch_size;
  // the lr schedule always spans the full epoch plan so an interrupted and a
  // resumed run see identical rates; max_steps only stops execution early
  const int64_t total_steps = spe * cfg.epochs;
  int64_t run_until = total_steps;
  if (cfg.max_steps > 0) run_until = std::min(run_until, start_step + cfg.max_steps);

  std::ofstream log;
  if (!cfg.out_dir.empty())
    log.open((fs::path(cfg.out_dir) / "train.log").string(), std::ios::app);

  const double h_min = model->config().h_min;
  const double offset = cfg.eval_offset_m;
  TrainResult result;
  result.has_val = !val_tiles.empty();
  result.best_val_rel = 1e300;
  json history = json::array();

  std::vector<int64_t> perm(train_tiles.size());
  int64_t perm_epoch = -1;
  const double run_start = wall_ms();
  for (int64_t step = start_step; step < run_until; ++step) {
    const int64_t epoch = step / spe;
    if (epoch != perm_epoch) {
      std::iota(perm.begin(), perm.end(), 0);
      Rng shuffle_rng(Rng::mix(cfg.seed ^ 0x5488ee, static_cast<uint64_t>(epoch)));
      for (int64_t i = static_cast<int64_t>(perm.size()) - 1; i > 0; --i) {
        const int64_t j = shuffle_rng.uniform_int(i + 1);
        std::swap(perm[i], perm[j]);
      }
      perm_epoch = epoch;
    }

    Tape tape;
    std::vector<Var> preds;
    std::vector<Tensor> gts, masks;
    std::vector<std::string> batch_names;
    const int64_t batch_start = (step % spe) * cfg.batch_size;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int64_t idx = perm[(batch_start + b) % static_cast<int64_t>(perm.size())];
      const NamedTile& nt = train_tiles[static_cast<size_t>(idx)];
      TilePair sample = nt.tile;
      if (cfg.augment_enabled) {
        Rng aug_rng = Rng::split(Rng::mix(cfg.seed, 0xa06), static_cast<uint64_t>(step) * 1000 + b);
        sample = augment(nt.tile, aug_rng, cfg.augment);
      }
      batch_names.push_back(nt.name);
      Var image = tape.input(sample.image);
      HeightFormerModel::Output out = model->forward(tape, image);
      // offset into strictly positive log space
      preds.push_back(add_scalar(out.height_m, offset - h_min));
      Tensor gt_off(sample.dsm.shape());
      for (int64_t i = 0; i < gt_off.numel(); ++i) gt_off[i] = sample.dsm[i] + offset - h_min;
      gts.push_back(std::move(gt_off));
      masks.push_back(sample.mask);
    }

    Var loss = silog_loss_pooled(tape, preds, gts, masks, cfg.loss);
    const double loss_value = loss.val()[0];
    if (!std::isfinite(loss_value)) {
      if (!cfg.out_dir.empty()) {
        std::ofstream diag((fs::path(cfg.out_dir) / "diagnostics.txt").string(), std::ios::app);
        diag << "non-finite loss at step " << step << "; batch:";
        for (const std::string& n : batch_names) diag << " " << n;
        diag << "\n";
      }
      throw NumericError("non-finite loss at step " + std::to_string(step) + " (see diagnostics)");
    }
    model->params().zero_grads();
    tape.backward(loss);
    if (cfg.clip_gradients) model->params().clip_grad_norm(cfg.clip_norm);
    const double lr = lr_schedule(step + 1, total_steps, cfg.base_lr, cfg.warmup_frac);
    opt.step(model->params(), lr);
    result.loss_trace.push_back(loss_value);

    if (log && (step % cfg.log_every == 0 || step + 1 == run_until)) {
      char line[160];
      std::snprintf(line, sizeof(line), "step=%lld lr=%.8g loss=%.8g wall_ms=%.1f\n",
                    static_cast<long long>(step), lr, loss_value, wall_ms() - run_start);
      log << line;
      log.flush();
    }

    const bool epoch_end = (step + 1) % spe == 0 || step + 1 == run_until;
    if (epoch_end) {
      const int64_t done_epoch = step / spe;
      if (!val_tiles.empty() && (done_epoch % cfg.val_every_epochs == 0 || step + 1 == run_until)) {
        MetricsReport val = evaluate_model(*model, val_tiles, offset);
        history.push_back(metrics_to_history_entry(val, step + 1));
        result.final_val = val;
        if (!cfg.out_dir.empty() && val.rel < result.best_val_rel) {
          result.best_val_rel = val.rel;
          result.best_checkpoint = (fs::path(cfg.out_dir) / "best.ckpt").string();
          save_checkpoint(result.best_checkpoint, *model, step + 1, opt.step_count, true, cfg.seed,
                          json{{"history", history}}.dump());
        }
      }
      if (!cfg.out_dir.empty() && (done_epoch % cfg.checkpoint_every_epochs == 0 || step + 1 == run_until)) {
        result.final_checkpoint = (fs::path(cfg.out_dir) / "last.ckpt").string();
        save_checkpoint(result.final_checkpoint, *model, step + 1, opt.step_count, true, cfg.seed,
                        json{{"history", history}}.dump());
      }
    }
  }
  result.steps = run_until - start_step;
  if (result.best_checkpoint.empty()) result.best_checkpoint = result.final_checkpoint;
  return result;
}

Tensor stitch_tiles(int64_t rows, int64_t cols, int tile, int overlap,
                    const std::function<Tensor(int64_t, int64_t)>& tile_fn) {
  if (overlap < 0 || overlap >= tile) throw UsageError("stitch: overlap must be in [0, tile)");
  const int64_t stride = tile - overlap;
  const std::vector<int64_t> row_origins = grid_origins(rows, tile, stride);
  const std::vector<int64_t> col_origins = grid_origins(cols, tile, stride);
  if (row_origins.size() == 1 && col_origins.size() == 1) {
    Tensor pred = tile_fn(0, 0);
    if (pred.ndim() != 2 || pred.dim(0) != tile || pred.dim(1) != tile)
      throw ShapeError("stitch: tile_fn returned wrong shape");
    return pred;
  }

  // per-axis feathering ramp over the overlap band
  std::vector<double> ramp(static_cast<size_t>(tile), 1.0);
  if (overlap > 0) {
    for (int64_t i = 0; i < tile; ++i) {
      const double edge = static_cast<double>(std::min(i + 1, tile - i));
      ramp[static_cast<size_t>(i)] = std::min(1.0, edge / (overlap + 1));
    }
  }

  Tensor acc({rows, cols});
  Tensor wsum({rows, cols});
  for (int64_t r0 : row_origins) {
    for (int64_t c0 : col_origins) {
      Tensor pred = tile_fn(r0, c0);
      if (pred.ndim() != 2 || pred.dim(0) != tile || pred.dim(1) != tile)
        throw ShapeError("stitch: tile_fn returned wrong shape");
      for (int64_t i = 0; i < tile; ++i) {
        const double wy = ramp[static_cast<size_t>(i)];
        for (int64_t j = 0; j < tile; ++j) {
          const double w = wy * ramp[static_cast<size_t>(j)];
          acc.at(r0 + i, c0 + j) += w * pred.at(i, j);
          wsum.at(r0 + i, c0 + j) += w;
        }
      }
    }
  }
  for (int64_t i = 0; i < acc.numel(); ++i) acc[i] /= wsum[i];
  return acc;
}

ScenePrediction predict_scene(const HeightFormerModel& model, const ScenePair& scene, int tile,
                              int overlap) {
  ScenePrediction out;
  const int64_t rows = scene.rows(), cols = scene.cols();
  if (rows < tile || cols < tile) {
    // single padded-tile path: replicate edges out to the tile size
    Tensor padded({tile, tile, 3});
    for (int64_t i = 0; i < tile; ++i)
      for (int64_t j = 0; j < tile; ++j) {
        const int64_t si = std::min(i, rows - 1), sj = std::min(j, cols - 1);
        for (int c = 0; c < 3; ++c) padded.at(i, j, c) = scene.image.at(si, sj, c);
      }
    HeightFormerModel::Prediction p = model.predict(padded);
    out.bin_sets.push_back(p.bins);
    out.height_m = Tensor({rows, cols});
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < cols; ++j) out.height_m.at(i, j) = p.height_m.at(i, j);
    return out;
  }
  out.height_m = stitch_tiles(rows, cols, tile, overlap, [&](int64_t r0, int64_t c0) {
    Tensor img({tile, tile, 3});
    for (int64_t i = 0; i < tile; ++i)
      std::memcpy(img.data() + i * tile * 3, scene.image.data() + ((r0 + i) * cols + c0) * 3,
                  static_cast<size_t>(tile) * 3 * sizeof(double));
    HeightFormerModel::Prediction p = model.predict(img);
    out.bin_sets.push_back(p.bins);
    return p.height_m;
  });
  return out;
}

std::string hardware_descriptor() {
  std::string cpu = "unknown-cpu";
  std::ifstream info("/proc/cpuinfo");
  std::string line;
  while (std::getline(info, line)) {
    if (line.rfind("model name", 0) == 0) {
      const size_t colon = line.find(':');
      if (colon != std::string::npos) cpu = line.substr(colon + 2);
      break;
    }
  }
  return cpu + " x" + std::to_string(std::thread::hardware_concurrency());
}

ThroughputReport benchmark_model(const HeightFormerModel& model, int input_size, int reps) {
  if (reps < 1) throw UsageError("benchmark: repetitions must be >= 1");
  Rng rng(1);
  Tensor img({input_size, input_size, 3});
  for (int64_t i = 0; i < img.numel(); ++i) img[i] = rng.uniform(0.0, 1.0);
  (void)model.predict(img);  // warmup

  ThroughputReport rep;
  rep.reps = reps;
  rep.input_size = input_size;
  rep.param_count = model.params().count_trainable();
  rep.hardware = hardware_descriptor();
  using clock = std::chrono::steady_clock;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = clock::now();
    (void)model.predict(img);
    const auto t1 = clock::now();
    rep.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::vector<double> sorted = rep.samples_ms;
  std::sort(sorted.begin(), sorted.end());
  rep.median_ms = sorted[sorted.size() / 2];
  rep.p95_ms = sorted[std::min(sorted.size() - 1, static_cast<size_t>(std::ceil(0.95 * sorted.size())) - 1)];
  rep.fps = 1000.0 / rep.median_ms;
  return rep;
}

}  // namespace heightformer
