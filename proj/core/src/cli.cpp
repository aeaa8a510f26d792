#include "heightformer/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "heightformer/config.hpp"
#include "heightformer/errors.hpp"
#include "heightformer/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace heightformer {

namespace {

std::string cache_dir() {
  const char* env = std::getenv("HEIGHTFORMER_CACHE");
  if (env && *env) return env;
  return "hf_cache";
}

KvMap load_kv(const std::string& config_path, const std::vector<std::string>& overrides) {
  KvMap kv;
  if (!config_path.empty()) kv = parse_config_file(config_path);
  apply_overrides(kv, overrides);
  return kv;
}

void write_snapshot(const std::string& out_dir, const KvMap& kv) {
  fs::create_directories(out_dir);
  std::ofstream f((fs::path(out_dir) / "config_resolved.txt").string());
  f << render_config(kv);
}

std::string g6(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct SubOpts {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
};

void attach_common(CLI::App* sub, SubOpts& o, const std::string& default_out) {
  sub->add_option("--config", o.config_path, "key=value configuration file");
  sub->add_option("--out", o.out_dir, "output directory")->default_val(default_out);
  sub->add_option("overrides", o.overrides, "config overrides as key=value");
}

int cmd_make_synthetic(const SubOpts& o) {
  KvMap kv = load_kv(o.config_path, o.overrides);
  ConfigView v(kv);
  SynthSpec spec = synth_spec_from(v);
  const int scenes = v.get_int("synth.scenes", 8);
  const double val_fraction = v.get_double("synth.val_fraction", 0.25);
  v.finish();
  spec.validate();
  generate_synthetic_dataset(o.out_dir, spec, scenes, val_fraction);
  write_snapshot(o.out_dir, resolved_synth_config(spec, scenes, val_fraction));
  std::cout << "wrote " << scenes << " synthetic scenes (" << spec.size << "x" << spec.size << ") to "
            << o.out_dir << "\n";
  return 0;
}

int cmd_train(const SubOpts& o) {
  KvMap kv = load_kv(o.config_path, o.overrides);
  ConfigView v(kv);
  TrainConfig cfg = train_config_from(v);
  v.finish();
  cfg.out_dir = o.out_dir;
  if (cfg.data_root.empty()) throw UsageError("train: set data.root (see make-synthetic)");
  // resolve the dataset height range into the snapshot
  Dataset ds = scan_dataset(cfg.data_root);
  if (cfg.model.h_min == cfg.model.h_max) {
    cfg.model.h_min = ds.h_min;
    cfg.model.h_max = ds.h_max;
  }
  write_snapshot(o.out_dir, resolved_train_config(cfg));

  TrainResult res = train(cfg);
  json summary{{"steps", res.steps},
               {"final_loss", res.loss_trace.empty() ? 0.0 : res.loss_trace.back()},
               {"checkpoint", res.final_checkpoint},
               {"best_checkpoint", res.best_checkpoint}};
  if (res.has_val) {
    summary["val_rel"] = res.final_val.rel;
    std::ofstream mf((fs::path(o.out_dir) / "val_metrics.json").string());
    mf << metrics_json(res.final_val);
  }
  std::ofstream sf((fs::path(o.out_dir) / "result.json").string());
  sf << summary.dump(2) << "\n";
  std::cout << "trained " << res.steps << " steps; final loss "
            << (res.loss_trace.empty() ? 0.0 : res.loss_trace.back()) << "; checkpoints in " << o.out_dir
            << "\n";
  return 0;
}

std::map<std::string, std::string> f32_stems(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".f32") out[e.path().stem().string()] = e.path().string();
  return out;
}

int cmd_evaluate(const std::string& pred_dir, const std::string& gt_dir, const SubOpts& o) {
  KvMap kv = load_kv(o.config_path, o.overrides);
  ConfigView v(kv);
  const double offset = v.get_double("eval.offset", 1.0);
  const double eps = v.get_double("eval.epsilon", 1e-6);
  const double sentinel = v.get_double("data.sentinel", -9999.0);
  v.finish();

  auto preds = f32_stems(pred_dir);
  auto gts = f32_stems(gt_dir);
  std::vector<std::string> unmatched;
  for (const auto& [stem, _] : preds)
    if (!gts.count(stem)) unmatched.push_back(stem + " (prediction without ground truth)");
  for (const auto& [stem, _] : gts)
    if (!preds.count(stem)) unmatched.push_back(stem + " (ground truth without prediction)");
  if (!unmatched.empty()) {
    std::string msg = "unmatched evaluation stems:";
    for (const std::string& s : unmatched) msg += " " + s;
    throw DataError(msg);
  }
  if (preds.empty()) throw DataError("no .f32 rasters found in " + pred_dir);

  std::vector<Tensor> pred_t, gt_t, mask_t;
  std::vector<std::string> names;
  double h_min = 0.0;
  bool first = true;
  for (const auto& [stem, ppath] : preds) {
    RasterHeader ph, gh;
    Tensor p = read_f32_raster(ppath, &ph);
    Tensor g = read_f32_raster(gts[stem], &gh);
    if (!p.same_shape(g))
      throw DataError("evaluation rasters disagree on shape for stem " + stem);
    Tensor mask(g.shape());
    for (int64_t i = 0; i < g.numel(); ++i)
      mask[i] = (std::isfinite(g[i]) && g[i] != sentinel) ? 1.0 : 0.0;
    h_min = first ? gh.h_min : std::min(h_min, gh.h_min);
    first = false;
    pred_t.push_back(std::move(p));
    gt_t.push_back(std::move(g));
    mask_t.push_back(std::move(mask));
    names.push_back(stem);
  }
  MetricsReport rep = evaluate(pred_t, gt_t, mask_t, h_min, offset, eps, &names);
  const std::string js = metrics_json(rep);
  const std::string table = metrics_table(rep);
  fs::create_directories(o.out_dir);
  {
    std::ofstream jf((fs::path(o.out_dir) / "metrics.json").string());
    jf << js;
    std::ofstream tf((fs::path(o.out_dir) / "metrics.txt").string());
    tf << table;
  }
  write_snapshot(o.out_dir, kv);
  std::cout << table;
  return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& data_root, const std::string& images_dir,
                int tile, int overlap, const SubOpts& o) {
  KvMap kv = load_kv(o.config_path, o.overrides);
  ConfigView v(kv);
  const double sentinel = v.get_double("data.sentinel", -9999.0);
  v.finish();
  if (tile % 32 != 0) throw UsageError("predict: tile must be divisible by 32");
  if (overlap < 0 || overlap >= tile) throw UsageError("predict: overlap must be in [0, tile)");

  std::unique_ptr<HeightFormerModel> model = model_from_checkpoint(load_checkpoint(ckpt_path));
  const double h_min = model->config().h_min, h_max = model->config().h_max;

  struct Item {
    std::string stem, image_path, dsm_path;  // dsm optional
  };
  std::vector<Item> items;
  if (!data_root.empty()) {
    Dataset ds = scan_dataset(data_root, sentinel);
    for (const DatasetEntry& e : ds.entries) items.push_back({e.stem, e.image_path, e.dsm_path});
  } else if (!images_dir.empty()) {
    if (!fs::is_directory(images_dir)) throw DataError("not a directory: " + images_dir);
    for (const auto& e : fs::directory_iterator(images_dir))
      if (e.path().extension() == ".png") items.push_back({e.path().stem().string(), e.path().string(), ""});
    if (items.empty()) throw DataError("no .png images found in " + images_dir);
  } else {
    throw UsageError("predict: pass --data or --images");
  }

  fs::create_directories(o.out_dir);
  write_snapshot(o.out_dir, kv);
  for (const Item& item : items) {
    ScenePair scene;
    RasterHeader gt_hdr;
    Tensor gt, gt_mask;
    if (!item.dsm_path.empty()) {
      TilePair t = load_tile_pair(item.image_path, item.dsm_path, sentinel);
      scene = t;
      gt = t.dsm;
      gt_mask = t.mask;
      scene.resolution = t.resolution;
    } else {
      scene.image = read_png(item.image_path);
      scene.dsm = Tensor::zeros({scene.image.dim(0), scene.image.dim(1)});
      scene.mask = Tensor::full({scene.image.dim(0), scene.image.dim(1)}, 1.0);
      scene.h_min = h_min;
      scene.h_max = h_max;
    }

    ScenePrediction pred = predict_scene(*model, scene, tile, overlap);
    const fs::path base = fs::path(o.out_dir) / item.stem;
    RasterHeader out_hdr{pred.height_m.dim(0), pred.height_m.dim(1), scene.resolution, h_min, h_max};
    write_f32_raster(base.string() + "_pred.f32", pred.height_m, out_hdr);
    write_colormap_png(base.string() + "_pred.png", pred.height_m, h_min, h_max, Colormap::Viridis);

    json bins = json::array();
    for (const Tensor& b : pred.bin_sets) {
      json one = json::array();
      for (int64_t i = 0; i < b.numel(); ++i) one.push_back(b[i]);
      bins.push_back(one);
    }
    std::ofstream bf(base.string() + "_bins.json");
    bf << bins.dump() << "\n";

    if (gt.defined()) {
      Tensor err(gt.shape());
      double absmax = 0.0;
      for (int64_t i = 0; i < gt.numel(); ++i) {
        err[i] = gt_mask[i] > 0.5 ? pred.height_m[i] - gt[i] : 0.0;
        absmax = std::max(absmax, std::abs(err[i]));
      }
      if (absmax == 0.0) absmax = 1.0;
      write_colormap_png(base.string() + "_err.png", err, -absmax, absmax, Colormap::Diverging);
    }
    std::cout << "predicted " << item.stem << " -> " << base.string() << "_pred.f32\n";
  }
  return 0;
}

int cmd_benchmark(const std::string& ckpt_path, int size, int reps, const SubOpts& o) {
  KvMap kv = load_kv(o.config_path, o.overrides);
  std::unique_ptr<HeightFormerModel> model;
  if (!ckpt_path.empty()) {
    model = model_from_checkpoint(load_checkpoint(ckpt_path));
    ConfigView v(kv);
    v.finish();
  } else {
    ConfigView v(kv);
    TrainConfig cfg = train_config_from(v);
    v.finish();
    if (cfg.model.h_min == cfg.model.h_max) cfg.model.h_max = cfg.model.h_min + 1.0;
    model = std::make_unique<HeightFormerModel>(cfg.model, cfg.seed);
  }
  if (size % 32 != 0) throw UsageError("benchmark: size must be divisible by 32");

  ThroughputReport rep = benchmark_model(*model, size, reps);
  std::map<std::string, int64_t> breakdown = model->params().breakdown(1);
  json j{{"input_size", rep.input_size}, {"reps", rep.reps},         {"median_ms", rep.median_ms},
         {"p95_ms", rep.p95_ms},         {"fps", rep.fps},           {"parameters", rep.param_count},
         {"hardware", rep.hardware},     {"samples_ms", rep.samples_ms}};
  for (const auto& [k, n] : breakdown) j["parameters_by_module"][k] = n;
  fs::create_directories(o.out_dir);
  std::ofstream bf((fs::path(o.out_dir) / "benchmark.json").string());
  bf << j.dump(2) << "\n";
  std::cout << "size=" << rep.input_size << " reps=" << rep.reps << " median_ms=" << g6(rep.median_ms)
            << " p95_ms=" << g6(rep.p95_ms) << " fps=" << g6(rep.fps) << " params=" << rep.param_count
            << "\nhardware: " << rep.hardware << "\n";
  return 0;
}

int cmd_ablate(const std::string& n_list, const SubOpts& o) {
  KvMap kv = load_kv(o.config_path, o.overrides);

  std::vector<int> n_values;
  {
    std::istringstream ss(n_list);
    std::string part;
    while (std::getline(ss, part, ',')) n_values.push_back(std::stoi(part));
    if (n_values.empty()) throw UsageError("ablate-bins: pass --n like 8,32");
  }

  // the comparison needs a dataset; synthesize a bimodal one if none given
  if (!kv.count("data.root")) {
    const std::string root = (fs::path(cache_dir()) / "bimodal").string();
    if (!fs::exists(fs::path(root) / "images")) {
      KvMap synth_kv = kv;
      ConfigView sv(synth_kv);
      SynthSpec spec = synth_spec_from(sv);
      spec.per_scene_building_height = true;
      const int scenes = sv.get_int("synth.scenes", 10);
      const double val_fraction = sv.get_double("synth.val_fraction", 0.3);
      generate_synthetic_dataset(root, spec, scenes, val_fraction);
    }
    kv["data.root"] = root;
    kv["data.train_split"] = (fs::path(root) / "splits" / "train.txt").string();
    kv["data.val_split"] = (fs::path(root) / "splits" / "val.txt").string();
  }
  // synth.* keys may remain from the dataset-generation step
  for (auto it = kv.begin(); it != kv.end();)
    it = it->first.rfind("synth.", 0) == 0 ? kv.erase(it) : std::next(it);

  struct Row {
    std::string type;
    int n;
    MetricsReport rep;
  };
  std::vector<Row> rows;
  for (const bool fixed : {true, false}) {
    for (const int n : n_values) {
      KvMap run_kv = kv;
      run_kv["model.n_bins"] = std::to_string(n);
      run_kv["decoder.fixed_bins"] = fixed ? "true" : "false";
      ConfigView v(run_kv);
      TrainConfig cfg = train_config_from(v);
      v.finish();
      const std::string tag = std::string(fixed ? "fixed" : "adaptive") + "_n" + std::to_string(n);
      cfg.out_dir = (fs::path(o.out_dir) / tag).string();
      std::cout << "[ablate-bins] training " << tag << "...\n";
      TrainResult res = train(cfg);
      if (!res.has_val) throw DataError("ablate-bins requires a validation split");
      rows.push_back({fixed ? "fixed" : "adaptive", n, res.final_val});
    }
  }

  std::ostringstream table;
  table << "type      N    rel        rmse_log   d1       d2       d3\n";
  json j = json::array();
  for (const Row& r : rows) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-9s %-4d %-10.6g %-10.6g %-8.4f %-8.4f %-8.4f\n", r.type.c_str(),
                  r.n, r.rep.rel, r.rep.rmse_log, r.rep.delta1, r.rep.delta2, r.rep.delta3);
    table << line;
    j.push_back(json{{"type", r.type},
                     {"n", r.n},
                     {"rel", r.rep.rel},
                     {"rmse_log", r.rep.rmse_log},
                     {"delta1", r.rep.delta1},
                     {"delta2", r.rep.delta2},
                     {"delta3", r.rep.delta3}});
  }
  fs::create_directories(o.out_dir);
  write_snapshot(o.out_dir, kv);
  std::ofstream tf((fs::path(o.out_dir) / "ablation.txt").string());
  tf << table.str();
  std::ofstream jf((fs::path(o.out_dir) / "ablation.json").string());
  jf << j.dump(2) << "\n";
  std::cout << table.str();
  return 0;
}

}  // namespace

int run_command(const std::vector<std::string>& args) {
  CLI::App app{"monocular height estimation from single aerial images"};
  app.require_subcommand(1);

  SubOpts synth_o, train_o, eval_o, pred_o, bench_o, ablate_o;
  std::string pred_dir, gt_dir, ckpt_path, data_root, images_dir, n_list = "8,32";
  int tile = 448, overlap = 64, size = 448, reps = 10;

  CLI::App* synth = app.add_subcommand("make-synthetic", "generate a synthetic ortho/DSM dataset");
  attach_common(synth, synth_o, (fs::path(cache_dir()) / "synth").string());

  CLI::App* tr = app.add_subcommand("train", "train a model");
  attach_common(tr, train_o, "hf_out/train");

  CLI::App* ev = app.add_subcommand("evaluate", "metric suite over prediction/ground-truth rasters");
  ev->add_option("--pred", pred_dir, "directory of predicted .f32 rasters")->required();
  ev->add_option("--gt", gt_dir, "directory of ground-truth .f32 rasters")->required();
  attach_common(ev, eval_o, "hf_out/evaluate");

  CLI::App* pr = app.add_subcommand("predict", "stitched full-scene prediction with map renders");
  pr->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  pr->add_option("--data", data_root, "dataset root (images/ + dsm/), enables error maps");
  pr->add_option("--images", images_dir, "directory of bare .png images");
  pr->add_option("--tile", tile, "tile size (divisible by 32)");
  pr->add_option("--overlap", overlap, "tile overlap in pixels");
  attach_common(pr, pred_o, "hf_out/predict");

  CLI::App* be = app.add_subcommand("benchmark", "forward-pass throughput and parameter count");
  be->add_option("--ckpt", ckpt_path, "checkpoint file (else a fresh model from config)");
  be->add_option("--size", size, "square input size");
  be->add_option("--reps", reps, "timed repetitions");
  attach_common(be, bench_o, "hf_out/benchmark");

  CLI::App* ab = app.add_subcommand("ablate-bins", "fixed vs image-adaptive bins over bin counts");
  ab->add_option("--n", n_list, "comma-separated bin counts");
  attach_common(ab, ablate_o, "hf_out/ablate");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (app.got_subcommand(synth)) return cmd_make_synthetic(synth_o);
    if (app.got_subcommand(tr)) return cmd_train(train_o);
    if (app.got_subcommand(ev)) return cmd_evaluate(pred_dir, gt_dir, eval_o);
    if (app.got_subcommand(pr)) return cmd_predict(ckpt_path, data_root, images_dir, tile, overlap, pred_o);
    if (app.got_subcommand(be)) return cmd_benchmark(ckpt_path, size, reps, bench_o);
    if (app.got_subcommand(ab)) return cmd_ablate(n_list, ablate_o);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const ShapeError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  }
  return 1;
}

}  // namespace heightformer
