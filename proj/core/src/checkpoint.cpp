#include "heightformer/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

#include "heightformer/errors.hpp"

using nlohmann::json;

namespace heightformer {

namespace {

constexpr char kMagic[8] = {'H', 'F', 'C', 'K', '0', '0', '0', '1'};

json encoder_to_json(const EncoderConfig& c) {
  return json{{"n_bins", c.n_bins},
              {"branch_channels", c.branch_channels},
              {"conv_stem_width", c.conv_stem_width},
              {"conv_stage_widths", c.conv_stage_widths},
              {"conv_stage_blocks", c.conv_stage_blocks},
              {"swin_embed_dim", c.swin_embed_dim},
              {"swin_depths", c.swin_depths},
              {"swin_heads", c.swin_heads},
              {"window", c.window},
              {"mlp_ratio", c.mlp_ratio},
              {"coupling_hidden", c.coupling_hidden},
              {"sigmoid_gate", c.sigmoid_gate}};
}

EncoderConfig encoder_from_json(const json& j) {
  EncoderConfig c;
  c.n_bins = j.at("n_bins");
  c.branch_channels = j.at("branch_channels");
  c.conv_stem_width = j.at("conv_stem_width");
  c.conv_stage_widths = j.at("conv_stage_widths");
  c.conv_stage_blocks = j.at("conv_stage_blocks");
  c.swin_embed_dim = j.at("swin_embed_dim");
  c.swin_depths = j.at("swin_depths");
  c.swin_heads = j.at("swin_heads");
  c.window = j.at("window");
  c.mlp_ratio = j.at("mlp_ratio");
  c.coupling_hidden = j.at("coupling_hidden");
  c.sigmoid_gate = j.at("sigmoid_gate");
  return c;
}

json decoder_to_json(const DecoderConfig& c) {
  return json{{"n_bins", c.n_bins},
              {"query_dim", c.query_dim},
              {"heads", c.heads},
              {"token_cap_side", c.token_cap_side},
              {"pyramid_hidden", c.pyramid_hidden},
              {"bin_mode", c.bin_mode},
              {"fixed_bins", c.fixed_bins},
              {"fixed_partition", c.fixed_partition}};
}

DecoderConfig decoder_from_json(const json& j) {
  DecoderConfig c;
  c.n_bins = j.at("n_bins");
  c.query_dim = j.at("query_dim");
  c.heads = j.at("heads");
  c.token_cap_side = j.at("token_cap_side");
  c.pyramid_hidden = j.at("pyramid_hidden");
  c.bin_mode = j.at("bin_mode");
  c.fixed_bins = j.at("fixed_bins");
  c.fixed_partition = j.at("fixed_partition");
  return c;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) {
  json j{{"encoder", encoder_to_json(cfg.encoder)},
         {"decoder", decoder_to_json(cfg.decoder)},
         {"h_min", cfg.h_min},
         {"h_max", cfg.h_max}};
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  json j = json::parse(text);
  ModelConfig cfg;
  cfg.encoder = encoder_from_json(j.at("encoder"));
  cfg.decoder = decoder_from_json(j.at("decoder"));
  cfg.h_min = j.at("h_min");
  cfg.h_max = j.at("h_max");
  return cfg;
}

void save_checkpoint(const std::string& path, const HeightFormerModel& model, int64_t step,
                     int64_t opt_step_count, bool include_optimizer, uint64_t seed,
                     const std::string& extra_json) {
  json dir;
  dir["format"] = 1;
  dir["step"] = step;
  dir["opt_step_count"] = opt_step_count;
  dir["seed"] = seed;
  dir["config"] = json::parse(model_config_to_json(model.config()));
  dir["extra"] = extra_json;

  json tensors = json::array();
  int64_t offset = 0;
  auto add_entry = [&](const std::string& name, const Tensor& t) {
    tensors.push_back(json{{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"numel", t.numel()}});
    offset += t.numel();
  };
  for (const Param* p : model.params().all()) add_entry(p->name, p->value);
  if (include_optimizer) {
    for (const Param* p : model.params().all()) {
      if (p->m.defined()) add_entry("optim.m." + p->name, p->m);
      if (p->v.defined()) add_entry("optim.v." + p->name, p->v);
    }
  }
  dir["tensors"] = tensors;

  const std::string header = dir.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot create checkpoint file: " + path);
  out.write(kMagic, 8);
  const uint64_t hlen = header.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));

  auto write_tensor = [&](const Tensor& t) {
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  };
  for (const Param* p : model.params().all()) write_tensor(p->value);
  if (include_optimizer) {
    for (const Param* p : model.params().all()) {
      if (p->m.defined()) write_tensor(p->m);
      if (p->v.defined()) write_tensor(p->v);
    }
  }
  if (!out) throw DataError("checkpoint write failed: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint file: " + path);
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
    throw DataError("not a checkpoint file: " + path);
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string header(hlen, '\0');
  in.read(header.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw DataError("checkpoint header truncated: " + path);

  json dir = json::parse(header);
  CheckpointData ckpt;
  ckpt.step = dir.at("step");
  ckpt.opt_step_count = dir.at("opt_step_count");
  ckpt.seed = dir.at("seed");
  ckpt.model_config = model_config_from_json(dir.at("config").dump());
  ckpt.extra_json = dir.at("extra");

  for (const json& e : dir.at("tensors")) {
    const std::string name = e.at("name");
    const std::vector<int64_t> shape = e.at("shape");
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw DataError("checkpoint payload truncated at " + name + ": " + path);
    if (name.rfind("optim.m.", 0) == 0) ckpt.opt_m[name.substr(8)] = std::move(t);
    else if (name.rfind("optim.v.", 0) == 0) ckpt.opt_v[name.substr(8)] = std::move(t);
    else ckpt.params[name] = std::move(t);
  }
  return ckpt;
}

std::unique_ptr<HeightFormerModel> model_from_checkpoint(const CheckpointData& ckpt) {
  auto model = std::make_unique<HeightFormerModel>(ckpt.model_config, ckpt.seed);
  auto params = model->params().all();
  if (params.size() != ckpt.params.size())
    throw DataError("checkpoint parameter set does not match the configured model");
  for (Param* p : params) {
    auto it = ckpt.params.find(p->name);
    if (it == ckpt.params.end()) throw DataError("checkpoint missing parameter: " + p->name);
    if (!it->second.same_shape(p->value))
      throw DataError("checkpoint shape mismatch for " + p->name);
    std::memcpy(p->value.data(), it->second.data(), static_cast<size_t>(p->value.numel()) * sizeof(double));
    auto mi = ckpt.opt_m.find(p->name);
    if (mi != ckpt.opt_m.end()) p->m = mi->second.clone();
    auto vi = ckpt.opt_v.find(p->name);
    if (vi != ckpt.opt_v.end()) p->v = vi->second.clone();
  }
  return model;
}

int64_t count_parameters(const CheckpointData& ckpt, std::map<std::string, int64_t>* breakdown) {
  int64_t total = 0;
  if (breakdown) breakdown->clear();
  for (const auto& [name, t] : ckpt.params) {
    total += t.numel();
    if (breakdown) {
      const size_t dot = name.find('.');
      (*breakdown)[name.substr(0, dot)] += t.numel();
    }
  }
  return total;
}

}  // namespace heightformer
