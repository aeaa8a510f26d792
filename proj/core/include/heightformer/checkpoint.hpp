#pragma once

#include <map>
#include <memory>
#include <string>

#include "heightformer/model.hpp"

namespace heightformer {

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& json_text);

// On-disk checkpoint: magic, JSON directory (tensor names/shapes/offsets,
// config echo, counters, free-form extra), then raw float64 payload.
// Tensor names are the ParamStore names, stable across runs.
struct CheckpointData {
  ModelConfig model_config;
  uint64_t seed = 0;
  int64_t step = 0;
  int64_t opt_step_count = 0;
  std::map<std::string, Tensor> params;
  std::map<std::string, Tensor> opt_m, opt_v;  // present when saved with optimizer state
  std::string extra_json;                      // config echo / metric history, opaque here
};

void save_checkpoint(const std::string& path, const HeightFormerModel& model, int64_t step,
                     int64_t opt_step_count, bool include_optimizer, uint64_t seed,
                     const std::string& extra_json);

CheckpointData load_checkpoint(const std::string& path);

// Rebuilds the model and restores every parameter bit-exactly. Optimizer
// moments (when present) are written back into the ParamStore.
std::unique_ptr<HeightFormerModel> model_from_checkpoint(const CheckpointData& ckpt);

int64_t count_parameters(const CheckpointData& ckpt, std::map<std::string, int64_t>* breakdown = nullptr);

}  // namespace heightformer
