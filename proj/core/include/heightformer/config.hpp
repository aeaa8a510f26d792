#pragma once

#include <array>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "heightformer/train.hpp"

namespace heightformer {

using KvMap = std::map<std::string, std::string>;

// Flat key=value configuration text with '#' comments and dotted section
// prefixes (encoder.*, decoder.*, train.*, loss.*, augment.*, data.*, synth.*).
KvMap parse_config_file(const std::string& path);
void apply_overrides(KvMap& kv, const std::vector<std::string>& assignments);
std::string render_config(const KvMap& kv);

// Typed accessor that records which keys were read; finish() rejects any
// leftover key by name.
class ConfigView {
 public:
  explicit ConfigView(const KvMap& kv) : kv_(kv) {}
  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  std::string get_str(const std::string& key, const std::string& def);
  double get_double(const std::string& key, double def);
  int get_int(const std::string& key, int def);
  int64_t get_i64(const std::string& key, int64_t def);
  uint64_t get_u64(const std::string& key, uint64_t def);
  bool get_bool(const std::string& key, bool def);
  std::array<int, 3> get_int3(const std::string& key, std::array<int, 3> def);
  void finish() const;

 private:
  const std::string* raw(const std::string& key);
  KvMap kv_;
  std::set<std::string> consumed_;
};

TrainConfig train_config_from(ConfigView& v);
SynthSpec synth_spec_from(ConfigView& v);

// Full snapshots (defaults resolved) for the per-run config echo.
KvMap resolved_train_config(const TrainConfig& cfg);
KvMap resolved_synth_config(const SynthSpec& spec, int scenes, double val_fraction);

}  // namespace heightformer
