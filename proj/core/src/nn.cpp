#include "heightformer/nn.hpp"

#include <cmath>

#include "heightformer/errors.hpp"

namespace heightformer {

Param& ParamStore::create(const std::string& name, Tensor init) {
  if (by_name_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
  auto p = std::make_unique<Param>();
  p->name = name;
  p->value = std::move(init);
  Param& ref = *p;
  by_name_[name] = p.get();
  params_.push_back(std::move(p));
  return ref;
}

Param* ParamStore::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

const Param* ParamStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

std::vector<Param*> ParamStore::all() {
  std::vector<Param*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Param*> ParamStore::all() const {
  std::vector<const Param*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

int64_t ParamStore::count_trainable() const {
  int64_t n = 0;
  for (const auto& p : params_)
    if (p->trainable) n += p->value.numel();
  return n;
}

std::map<std::string, int64_t> ParamStore::breakdown(int depth) const {
  std::map<std::string, int64_t> out;
  for (const auto& p : params_) {
    if (!p->trainable) continue;
    std::string key;
    int dots = 0;
    for (char c : p->name) {
      if (c == '.') {
        ++dots;
        if (dots >= depth) break;
      }
      key.push_back(c);
    }
    out[key] += p->value.numel();
  }
  return out;
}

void ParamStore::zero_grads() {
  for (auto& p : params_)
    if (p->grad.defined()) p->grad.zero();
}

double ParamStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) {
    if (!p->grad.defined()) continue;
    const double* g = p->grad.data();
    for (int64_t i = 0; i < p->grad.numel(); ++i) sq += g[i] * g[i];
  }
  return std::sqrt(sq);
}

void ParamStore::clip_grad_norm(double max_norm) {
  const double norm = grad_norm();
  if (norm <= max_norm || norm == 0.0) return;
  const double s = max_norm / norm;
  for (auto& p : params_) {
    if (!p->grad.defined()) continue;
    double* g = p->grad.data();
    for (int64_t i = 0; i < p->grad.numel(); ++i) g[i] *= s;
  }
}

Tensor trunc_normal_init(Rng& rng, std::vector<int64_t> shape, double stddev) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.truncated_normal(stddev);
  return t;
}

Tensor he_normal_init(Rng& rng, std::vector<int64_t> shape, int64_t fan_in) {
  Tensor t(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
  return t;
}

Linear::Linear(ParamStore& ps, const std::string& name, int64_t in, int64_t out, Rng& rng, Init init,
               bool bias) {
  Tensor wt;
  switch (init) {
    case Init::TruncNormal: wt = trunc_normal_init(rng, {out, in}); break;
    case Init::HeNormal: wt = he_normal_init(rng, {out, in}, in); break;
    case Init::Zero: wt = Tensor::zeros({out, in}); break;
  }
  w = &ps.create(name + ".weight", std::move(wt));
  if (bias) b = &ps.create(name + ".bias", Tensor::zeros({out}));
}

Var Linear::operator()(Tape& t, Var x) const {
  Var wv = t.param(*w);
  Var bv = b ? t.param(*b) : Var();
  return linear(x, wv, bv);
}

Conv2d::Conv2d(ParamStore& ps, const std::string& name, int64_t in, int64_t out, int k, int stride_,
               int pad_, Rng& rng, bool bias) {
  stride = stride_;
  pad = pad_;
  w = &ps.create(name + ".weight", he_normal_init(rng, {k, k, in, out}, k * k * in));
  if (bias) b = &ps.create(name + ".bias", Tensor::zeros({out}));
}

Var Conv2d::operator()(Tape& t, Var x) const {
  Var wv = t.param(*w);
  Var bv = b ? t.param(*b) : Var();
  return conv2d(x, wv, bv, stride, pad);
}

ChannelNorm::ChannelNorm(ParamStore& ps, const std::string& name, int64_t c) {
  gamma = &ps.create(name + ".gamma", Tensor::full({c}, 1.0));
  beta = &ps.create(name + ".beta", Tensor::zeros({c}));
}

Var ChannelNorm::operator()(Tape& t, Var x) const {
  return layernorm_lastdim(x, t.param(*gamma), t.param(*beta), eps);
}

}  // namespace heightformer
