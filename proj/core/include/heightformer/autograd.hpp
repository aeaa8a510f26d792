#pragma once

#include <functional>
#include <string>
#include <vector>

#include "heightformer/tensor.hpp"

namespace heightformer {

// Named trainable tensor. Gradient and optimizer moments are allocated on
// first use so inference-only model instances stay light.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m;  // AdamW first moment
  Tensor v;  // AdamW second moment
  bool trainable = true;

  void ensure_grad() {
    if (!grad.defined()) grad = Tensor::zeros(value.shape());
  }
  void ensure_moments() {
    if (!m.defined()) m = Tensor::zeros(value.shape());
    if (!v.defined()) v = Tensor::zeros(value.shape());
  }
};

class Tape;

// Handle to a node on a Tape. Cheap to copy; invalid once the tape dies.
class Var {
 public:
  Var() = default;
  bool defined() const { return tape_ != nullptr; }
  const Tensor& val() const;
  const std::vector<int64_t>& shape() const { return val().shape(); }
  int64_t dim(int i) const { return val().dim(i); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* t, int id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape. Nodes are appended in forward order (already a
// topological order), so backward() is a single reverse sweep.
class Tape {
 public:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Param* bound = nullptr;
    std::function<void(Tape&, Node&)> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var input(Tensor v, bool requires_grad = false);
  Var constant(Tensor v) { return input(std::move(v), false); }
  Var param(Param& p);

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Gradients of
  // bound params are accumulated into Param::grad.
  void backward(Var loss);

  const Tensor& value(Var v) const { return nodes_[static_cast<size_t>(v.id())].value; }
  // Gradient w.r.t. v after backward(); zeros if v was never reached.
  Tensor grad(Var v);

  bool grad_enabled() const { return grad_enabled_; }
  void set_grad_enabled(bool b) { grad_enabled_ = b; }

  size_t size() const { return nodes_.size(); }

  // --- op implementation interface ---
  Var emit(Tensor value, const std::vector<Var>& parents, std::function<void(Tape&, Node&)> bwd);
  bool any_requires(const std::vector<Var>& vs) const;
  void accum_grad(int id, const Tensor& g);
  void accum_grad_move(int id, Tensor&& g);
  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }

 private:
  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

// A scoped "no gradients" guard for inference paths.
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape& t) : tape_(t), prev_(t.grad_enabled()) { tape_.set_grad_enabled(false); }
  ~NoGradGuard() { tape_.set_grad_enabled(prev_); }

 private:
  Tape& tape_;
  bool prev_;
};

// ---- elementwise / arithmetic ----
Var add(Var a, Var b);
Var add_const(Var a, const Tensor& c);
Var sub(Var a, Var b);
Var neg(Var a);
Var mul(Var a, Var b);
Var mul_const(Var a, const Tensor& c);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var relu(Var x);
Var gelu(Var x);
Var vsigmoid(Var x);
Var vsqrt(Var x);
// log(x) where mask > 0.5, exactly 0 elsewhere. Throws NumericError if a
// masked-in element is not strictly positive.
Var vlog_masked(Var x, const Tensor& mask);

// ---- linear algebra ----
Var matmul(Var a, Var b, bool ta = false, bool tb = false);
Var bmatmul(Var a, Var b, bool ta = false, bool tb = false);
// x[..., in] * w[out, in]^T + b[out]; pass Var() for no bias.
Var linear(Var x, Var w, Var b);

// ---- shape ----
Var reshape(Var x, std::vector<int64_t> shape);
Var permute(Var x, std::vector<int> axes);
Var concat_lastdim(const std::vector<Var>& xs);
Var slice_lastdim(Var x, int64_t start, int64_t len);

// ---- spatial (NHWC) ----
Var conv2d(Var x, Var w, Var b, int stride, int pad);
Var maxpool2d(Var x, int k, int stride, int pad);
Var global_avgpool(Var x);
Var global_maxpool(Var x);
Var adaptive_avgpool2d(Var x, int out_h, int out_w);
Var upsample_bilinear(Var x, int out_h, int out_w);
Var roll2d(Var x, int64_t dy, int64_t dx);
Var pad2d(Var x, int top, int bottom, int left, int right);
Var crop2d(Var x, int64_t top, int64_t left, int64_t h, int64_t w);
Var stride2_slice2d(Var x, int oy, int ox);
// x[H,W,C] * w[C], broadcast over spatial positions.
Var mul_channels(Var x, Var w);

// ---- normalization / attention ----
Var softmax_lastdim(Var x);
Var layernorm_lastdim(Var x, Var gamma, Var beta, double eps = 1e-5);
// scores[BW*heads, T, T] += mask[BW, T, T] (broadcast over heads).
Var add_window_mask(Var scores, const Tensor& mask, int heads);

// ---- reductions ----
Var sum_all(Var x);   // -> [1]
Var mean_all(Var x);  // -> [1]

}  // namespace heightformer
