#include "heightformer/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "heightformer/errors.hpp"

namespace heightformer {

namespace {

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

void insert_assignment(KvMap& kv, const std::string& text, const std::string& where) {
  const size_t eq = text.find('=');
  if (eq == std::string::npos)
    throw UsageError("expected key=value, got '" + text + "'" + where);
  const std::string key = trim(text.substr(0, eq));
  const std::string value = trim(text.substr(eq + 1));
  if (key.empty()) throw UsageError("empty config key" + where);
  kv[key] = value;
}

std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_int3(const std::array<int, 3>& a) {
  return std::to_string(a[0]) + "," + std::to_string(a[1]) + "," + std::to_string(a[2]);
}

}  // namespace

KvMap parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path);
  KvMap kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    insert_assignment(kv, line, " at " + path + ":" + std::to_string(lineno));
  }
  return kv;
}

void apply_overrides(KvMap& kv, const std::vector<std::string>& assignments) {
  for (const std::string& a : assignments) insert_assignment(kv, a, " in command-line override");
}

std::string render_config(const KvMap& kv) {
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
  return os.str();
}

const std::string* ConfigView::raw(const std::string& key) {
  auto it = kv_.find(key);
  if (it == kv_.end()) return nullptr;
  consumed_.insert(key);
  return &it->second;
}

std::string ConfigView::get_str(const std::string& key, const std::string& def) {
  const std::string* v = raw(key);
  return v ? *v : def;
}

double ConfigView::get_double(const std::string& key, double def) {
  const std::string* v = raw(key);
  if (!v) return def;
  try {
    size_t pos = 0;
    const double d = std::stod(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("");
    return d;
  } catch (const std::exception&) {
    throw UsageError("config key '" + key + "' expects a number, got '" + *v + "'");
  }
}

int ConfigView::get_int(const std::string& key, int def) {
  return static_cast<int>(get_i64(key, def));
}

int64_t ConfigView::get_i64(const std::string& key, int64_t def) {
  const std::string* v = raw(key);
  if (!v) return def;
  try {
    size_t pos = 0;
    const long long d = std::stoll(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("");
    return d;
  } catch (const std::exception&) {
    throw UsageError("config key '" + key + "' expects an integer, got '" + *v + "'");
  }
}

uint64_t ConfigView::get_u64(const std::string& key, uint64_t def) {
  const std::string* v = raw(key);
  if (!v) return def;
  try {
    size_t pos = 0;
    const unsigned long long d = std::stoull(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("");
    return d;
  } catch (const std::exception&) {
    throw UsageError("config key '" + key + "' expects an unsigned integer, got '" + *v + "'");
  }
}

bool ConfigView::get_bool(const std::string& key, bool def) {
  const std::string* v = raw(key);
  if (!v) return def;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw UsageError("config key '" + key + "' expects a boolean, got '" + *v + "'");
}

std::array<int, 3> ConfigView::get_int3(const std::string& key, std::array<int, 3> def) {
  const std::string* v = raw(key);
  if (!v) return def;
  std::array<int, 3> out{};
  std::istringstream ss(*v);
  std::string part;
  for (int i = 0; i < 3; ++i) {
    if (!std::getline(ss, part, ',')) throw UsageError("config key '" + key + "' expects three comma-separated integers");
    out[i] = std::stoi(trim(part));
  }
  if (std::getline(ss, part, ',')) throw UsageError("config key '" + key + "' expects exactly three values");
  return out;
}

void ConfigView::finish() const {
  for (const auto& [k, _] : kv_)
    if (!consumed_.count(k)) throw UsageError("unknown config key: '" + k + "'");
}

TrainConfig train_config_from(ConfigView& v) {
  TrainConfig cfg;
  const int n_bins = v.get_int("model.n_bins", 64);
  cfg.model.encoder.n_bins = n_bins;
  cfg.model.decoder.n_bins = n_bins;
  cfg.model.h_min = v.get_double("data.h_min", 0.0);
  cfg.model.h_max = v.get_double("data.h_max", 0.0);  // equal bounds = take from dataset

  EncoderConfig& e = cfg.model.encoder;
  e.branch_channels = v.get_int("encoder.branch_channels", 0);
  e.conv_stem_width = v.get_int("encoder.conv_stem_width", 64);
  e.conv_stage_widths = v.get_int3("encoder.conv_widths", {64, 128, 256});
  e.conv_stage_blocks = v.get_int3("encoder.conv_blocks", {2, 2, 2});
  e.swin_embed_dim = v.get_int("encoder.swin_embed_dim", 96);
  e.swin_depths = v.get_int3("encoder.swin_depths", {2, 2, 6});
  e.swin_heads = v.get_int3("encoder.swin_heads", {3, 6, 12});
  e.window = v.get_int("encoder.window", 7);
  e.mlp_ratio = v.get_int("encoder.mlp_ratio", 4);
  e.coupling_hidden = v.get_int("encoder.coupling_hidden", 0);
  e.sigmoid_gate = v.get_str("encoder.coupling_gate", "softmax") == "sigmoid";

  DecoderConfig& d = cfg.model.decoder;
  d.query_dim = v.get_int("decoder.query_dim", 256);
  d.heads = v.get_int("decoder.heads", 8);
  d.token_cap_side = v.get_int("decoder.token_cap_side", 24);
  d.pyramid_hidden = v.get_int("decoder.pyramid_hidden", 0);
  d.bin_mode = v.get_str("decoder.bin_mode", "literal");
  d.fixed_bins = v.get_bool("decoder.fixed_bins", false);
  d.fixed_partition = v.get_str("decoder.fixed_partition", "uniform");

  cfg.loss.alpha = v.get_double("loss.alpha", 10.0);
  cfg.loss.lambda = v.get_double("loss.lambda", 0.85);

  cfg.epochs = v.get_int("train.epochs", 24);
  cfg.batch_size = v.get_int("train.batch_size", 2);
  cfg.base_lr = v.get_double("train.lr", 1e-5);
  cfg.warmup_frac = v.get_double("train.warmup_frac", 0.125);
  cfg.weight_decay = v.get_double("train.weight_decay", 0.01);
  cfg.clip_gradients = v.get_bool("train.clip_gradients", true);
  cfg.clip_norm = v.get_double("train.clip_norm", 10.0);
  cfg.seed = v.get_u64("train.seed", 0);
  cfg.max_steps = v.get_i64("train.max_steps", 0);
  cfg.tile = v.get_int("train.tile", 512);
  cfg.log_every = v.get_int("train.log_every", 10);
  cfg.val_every_epochs = v.get_int("train.val_every_epochs", 1);
  cfg.checkpoint_every_epochs = v.get_int("train.checkpoint_every_epochs", 1);
  cfg.eval_offset_m = v.get_double("eval.offset", 1.0);
  cfg.resume_from = v.get_str("train.resume_from", "");
  cfg.device = v.get_str("train.device", "cpu");

  cfg.augment_enabled = v.get_bool("augment.enabled", true);
  cfg.augment.crop_size = v.get_int("augment.crop_size", 448);
  cfg.augment.rotate_prob = v.get_double("augment.rotate_prob", 0.5);
  cfg.augment.rotate_degrees = v.get_double("augment.rotate_degrees", 2.5);
  cfg.augment.photo_prob = v.get_double("augment.photo_prob", 0.5);
  cfg.augment.gamma_lo = v.get_double("augment.gamma_lo", 0.9);
  cfg.augment.gamma_hi = v.get_double("augment.gamma_hi", 1.1);
  cfg.augment.brightness_lo = v.get_double("augment.brightness_lo", 0.75);
  cfg.augment.brightness_hi = v.get_double("augment.brightness_hi", 1.25);
  cfg.augment.color_lo = v.get_double("augment.color_lo", 0.9);
  cfg.augment.color_hi = v.get_double("augment.color_hi", 1.1);

  cfg.data_root = v.get_str("data.root", "");
  cfg.train_split = v.get_str("data.train_split", "");
  cfg.val_split = v.get_str("data.val_split", "");
  return cfg;
}

SynthSpec synth_spec_from(ConfigView& v) {
  SynthSpec s;
  s.size = v.get_i64("synth.size", 512);
  s.ground_height = v.get_double("synth.ground", 0.0);
  s.buildings = v.get_int("synth.buildings", 12);
  s.building_height_lo = v.get_double("synth.bheight_lo", 3.0);
  s.building_height_hi = v.get_double("synth.bheight_hi", 18.0);
  s.building_foot_lo = v.get_i64("synth.bfoot_lo", 24);
  s.building_foot_hi = v.get_i64("synth.bfoot_hi", 96);
  s.trees = v.get_int("synth.trees", 30);
  s.tree_height_lo = v.get_double("synth.theight_lo", 2.0);
  s.tree_height_hi = v.get_double("synth.theight_hi", 10.0);
  s.road_fraction = v.get_double("synth.road_fraction", 0.08);
  s.edge_bevel_px = v.get_double("synth.edge_bevel", 0.0);
  s.pixel_noise = v.get_double("synth.noise", 0.03);
  s.h_min = v.get_double("synth.h_min", 0.0);
  s.h_max = v.get_double("synth.h_max", 25.0);
  s.per_scene_building_height = v.get_bool("synth.per_scene_building_height", false);
  s.seed = v.get_u64("synth.seed", 0);
  return s;
}

KvMap resolved_train_config(const TrainConfig& cfg) {
  KvMap kv;
  kv["model.n_bins"] = std::to_string(cfg.model.encoder.n_bins);
  kv["data.h_min"] = fmt_double(cfg.model.h_min);
  kv["data.h_max"] = fmt_double(cfg.model.h_max);
  const EncoderConfig& e = cfg.model.encoder;
  kv["encoder.branch_channels"] = std::to_string(e.branch_channels);
  kv["encoder.conv_stem_width"] = std::to_string(e.conv_stem_width);
  kv["encoder.conv_widths"] = fmt_int3(e.conv_stage_widths);
  kv["encoder.conv_blocks"] = fmt_int3(e.conv_stage_blocks);
  kv["encoder.swin_embed_dim"] = std::to_string(e.swin_embed_dim);
  kv["encoder.swin_depths"] = fmt_int3(e.swin_depths);
  kv["encoder.swin_heads"] = fmt_int3(e.swin_heads);
  kv["encoder.window"] = std::to_string(e.window);
  kv["encoder.mlp_ratio"] = std::to_string(e.mlp_ratio);
  kv["encoder.coupling_hidden"] = std::to_string(e.coupling_hidden);
  kv["encoder.coupling_gate"] = e.sigmoid_gate ? "sigmoid" : "softmax";
  const DecoderConfig& d = cfg.model.decoder;
  kv["decoder.query_dim"] = std::to_string(d.query_dim);
  kv["decoder.heads"] = std::to_string(d.heads);
  kv["decoder.token_cap_side"] = std::to_string(d.token_cap_side);
  kv["decoder.pyramid_hidden"] = std::to_string(d.pyramid_hidden);
  kv["decoder.bin_mode"] = d.bin_mode;
  kv["decoder.fixed_bins"] = d.fixed_bins ? "true" : "false";
  kv["decoder.fixed_partition"] = d.fixed_partition;
  kv["loss.alpha"] = fmt_double(cfg.loss.alpha);
  kv["loss.lambda"] = fmt_double(cfg.loss.lambda);
  kv["train.epochs"] = std::to_string(cfg.epochs);
  kv["train.batch_size"] = std::to_string(cfg.batch_size);
  kv["train.lr"] = fmt_double(cfg.base_lr);
  kv["train.warmup_frac"] = fmt_double(cfg.warmup_frac);
  kv["train.weight_decay"] = fmt_double(cfg.weight_decay);
  kv["train.clip_gradients"] = cfg.clip_gradients ? "true" : "false";
  kv["train.clip_norm"] = fmt_double(cfg.clip_norm);
  kv["train.seed"] = std::to_string(cfg.seed);
  kv["train.max_steps"] = std::to_string(cfg.max_steps);
  kv["train.tile"] = std::to_string(cfg.tile);
  kv["train.log_every"] = std::to_string(cfg.log_every);
  kv["train.val_every_epochs"] = std::to_string(cfg.val_every_epochs);
  kv["train.checkpoint_every_epochs"] = std::to_string(cfg.checkpoint_every_epochs);
  kv["train.resume_from"] = cfg.resume_from;
  kv["train.device"] = cfg.device;
  kv["eval.offset"] = fmt_double(cfg.eval_offset_m);
  kv["augment.enabled"] = cfg.augment_enabled ? "true" : "false";
  kv["augment.crop_size"] = std::to_string(cfg.augment.crop_size);
  kv["augment.rotate_prob"] = fmt_double(cfg.augment.rotate_prob);
  kv["augment.rotate_degrees"] = fmt_double(cfg.augment.rotate_degrees);
  kv["augment.photo_prob"] = fmt_double(cfg.augment.photo_prob);
  kv["augment.gamma_lo"] = fmt_double(cfg.augment.gamma_lo);
  kv["augment.gamma_hi"] = fmt_double(cfg.augment.gamma_hi);
  kv["augment.brightness_lo"] = fmt_double(cfg.augment.brightness_lo);
  kv["augment.brightness_hi"] = fmt_double(cfg.augment.brightness_hi);
  kv["augment.color_lo"] = fmt_double(cfg.augment.color_lo);
  kv["augment.color_hi"] = fmt_double(cfg.augment.color_hi);
  kv["data.root"] = cfg.data_root;
  kv["data.train_split"] = cfg.train_split;
  kv["data.val_split"] = cfg.val_split;
  return kv;
}

KvMap resolved_synth_config(const SynthSpec& s, int scenes, double val_fraction) {
  KvMap kv;
  kv["synth.scenes"] = std::to_string(scenes);
  kv["synth.val_fraction"] = fmt_double(val_fraction);
  kv["synth.size"] = std::to_string(s.size);
  kv["synth.ground"] = fmt_double(s.ground_height);
  kv["synth.buildings"] = std::to_string(s.buildings);
  kv["synth.bheight_lo"] = fmt_double(s.building_height_lo);
  kv["synth.bheight_hi"] = fmt_double(s.building_height_hi);
  kv["synth.bfoot_lo"] = std::to_string(s.building_foot_lo);
  kv["synth.bfoot_hi"] = std::to_string(s.building_foot_hi);
  kv["synth.trees"] = std::to_string(s.trees);
  kv["synth.theight_lo"] = fmt_double(s.tree_height_lo);
  kv["synth.theight_hi"] = fmt_double(s.tree_height_hi);
  kv["synth.road_fraction"] = fmt_double(s.road_fraction);
  kv["synth.edge_bevel"] = fmt_double(s.edge_bevel_px);
  kv["synth.noise"] = fmt_double(s.pixel_noise);
  kv["synth.h_min"] = fmt_double(s.h_min);
  kv["synth.h_max"] = fmt_double(s.h_max);
  kv["synth.per_scene_building_height"] = s.per_scene_building_height ? "true" : "false";
  kv["synth.seed"] = std::to_string(s.seed);
  return kv;
}

}  // namespace heightformer
