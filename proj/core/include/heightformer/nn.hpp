#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "heightformer/autograd.hpp"
#include "heightformer/rng.hpp"
#include "heightformer/tensor.hpp"

namespace heightformer {

// Owns all named parameters of a model. Names are stable checkpoint keys
// (dotted paths like "encoder.pixel.stem.weight").
class ParamStore {
 public:
  Param& create(const std::string& name, Tensor init);
  Param* find(const std::string& name);
  const Param* find(const std::string& name) const;

  std::vector<Param*> all();
  std::vector<const Param*> all() const;
  int64_t count_trainable() const;
  // Parameter totals grouped by the first `depth` dotted components.
  std::map<std::string, int64_t> breakdown(int depth = 1) const;
  void zero_grads();
  double grad_norm() const;
  void clip_grad_norm(double max_norm);

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::map<std::string, Param*> by_name_;
};

Tensor trunc_normal_init(Rng& rng, std::vector<int64_t> shape, double stddev = 0.02);
Tensor he_normal_init(Rng& rng, std::vector<int64_t> shape, int64_t fan_in);

enum class Init { TruncNormal, HeNormal, Zero };

struct Linear {
  Param* w = nullptr;
  Param* b = nullptr;
  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, int64_t in, int64_t out, Rng& rng,
         Init init = Init::TruncNormal, bool bias = true);
  Var operator()(Tape& t, Var x) const;
};

struct Conv2d {
  Param* w = nullptr;
  Param* b = nullptr;
  int stride = 1;
  int pad = 0;
  Conv2d() = default;
  Conv2d(ParamStore& ps, const std::string& name, int64_t in, int64_t out, int k, int stride, int pad,
         Rng& rng, bool bias = true);
  Var operator()(Tape& t, Var x) const;
};

// LayerNorm over the channel (last) axis of [..., C] maps and token stacks.
struct ChannelNorm {
  Param* gamma = nullptr;
  Param* beta = nullptr;
  double eps = 1e-5;
  ChannelNorm() = default;
  ChannelNorm(ParamStore& ps, const std::string& name, int64_t c);
  Var operator()(Tape& t, Var x) const;
};

}  // namespace heightformer
