#include "heightformer/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "heightformer/errors.hpp"

namespace heightformer {

namespace {

void check(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

// Raw (non-tape) permute used by forward and backward paths.
Tensor permute_tensor(const Tensor& x, const std::vector<int>& axes) {
  const auto& in_shape = x.shape();
  const int nd = x.ndim();
  check(static_cast<int>(axes.size()) == nd, "permute: axes rank mismatch");
  std::vector<int64_t> out_shape(nd);
  for (int i = 0; i < nd; ++i) out_shape[i] = in_shape[axes[i]];
  Tensor y(out_shape);

  std::vector<int64_t> in_strides(nd, 1), out_strides(nd, 1);
  for (int i = nd - 2; i >= 0; --i) {
    in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    out_strides[i] = out_strides[i + 1] * out_shape[i + 1];
  }
  // stride in the input for each output axis
  std::vector<int64_t> map_strides(nd);
  for (int i = 0; i < nd; ++i) map_strides[i] = in_strides[axes[i]];

  const double* src = x.data();
  double* dst = y.data();
  const int64_t n = x.numel();
  std::vector<int64_t> idx(nd, 0);
  int64_t src_off = 0;
  for (int64_t i = 0; i < n; ++i) {
    dst[i] = src[src_off];
    for (int d = nd - 1; d >= 0; --d) {
      idx[d]++;
      src_off += map_strides[d];
      if (idx[d] < out_shape[d]) break;
      src_off -= map_strides[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return y;
}

std::vector<int> inverse_axes(const std::vector<int>& axes) {
  std::vector<int> inv(axes.size());
  for (size_t i = 0; i < axes.size(); ++i) inv[axes[i]] = static_cast<int>(i);
  return inv;
}

Tensor roll_tensor(const Tensor& x, int64_t dy, int64_t dx) {
  const int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Tensor y(x.shape());
  auto wrap = [](int64_t i, int64_t n) { return ((i % n) + n) % n; };
  for (int64_t i = 0; i < h; ++i) {
    const int64_t si = wrap(i - dy, h);
    for (int64_t j = 0; j < w; ++j) {
      const int64_t sj = wrap(j - dx, w);
      std::memcpy(y.data() + (i * w + j) * c, x.data() + (si * w + sj) * c,
                  static_cast<size_t>(c) * sizeof(double));
    }
  }
  return y;
}

}  // namespace

const Tensor& Var::val() const { return tape_->value(*this); }

Var Tape::input(Tensor v, bool requires_grad) {
  Node n;
  n.value = std::move(v);
  n.requires_grad = requires_grad && grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(Param& p) {
  Node n;
  n.value = p.value;  // shared buffer, no copy
  n.requires_grad = grad_enabled_ && p.trainable;
  n.bound = &p;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

bool Tape::any_requires(const std::vector<Var>& vs) const {
  for (const Var& v : vs)
    if (v.defined() && nodes_[static_cast<size_t>(v.id())].requires_grad) return true;
  return false;
}

Var Tape::emit(Tensor value, const std::vector<Var>& parents, std::function<void(Tape&, Node&)> bwd) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_ && any_requires(parents);
  if (n.requires_grad) n.backward = std::move(bwd);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accum_grad(int id, const Tensor& g) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.requires_grad) return;
  if (!n.grad.defined()) {
    n.grad = g.clone();
  } else {
    axpy(g.numel(), 1.0, g.data(), n.grad.data());
  }
}

void Tape::accum_grad_move(int id, Tensor&& g) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.requires_grad) return;
  if (!n.grad.defined()) {
    n.grad = std::move(g);
  } else {
    axpy(g.numel(), 1.0, g.data(), n.grad.data());
  }
}

void Tape::backward(Var loss) {
  check(loss.tape() == this, "backward: loss from another tape");
  Node& last = nodes_[static_cast<size_t>(loss.id())];
  check(last.value.numel() == 1, "backward: loss must be scalar");
  last.grad = Tensor::full({1}, 1.0);
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.requires_grad || !n.grad.defined()) continue;
    if (n.backward) n.backward(*this, n);
    if (n.bound) {
      n.bound->ensure_grad();
      axpy(n.grad.numel(), 1.0, n.grad.data(), n.bound->grad.data());
    }
  }
}

Tensor Tape::grad(Var v) {
  Node& n = nodes_[static_cast<size_t>(v.id())];
  if (!n.grad.defined()) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

// ---------------------------------------------------------------- arithmetic

Var add(Var a, Var b) {
  Tape& t = *a.tape();
  check(a.val().same_shape(b.val()), "add: shape mismatch " + a.val().shape_str() + " vs " + b.val().shape_str());
  Tensor y = a.val().clone();
  axpy(y.numel(), 1.0, b.val().data(), y.data());
  const int ia = a.id(), ib = b.id();
  return t.emit(std::move(y), {a, b}, [ia, ib](Tape& t, Tape::Node& n) {
    t.accum_grad(ia, n.grad);
    t.accum_grad(ib, n.grad);
  });
}

Var add_const(Var a, const Tensor& c) {
  Tape& t = *a.tape();
  check(a.val().same_shape(c), "add_const: shape mismatch");
  Tensor y = a.val().clone();
  axpy(y.numel(), 1.0, c.data(), y.data());
  const int ia = a.id();
  return t.emit(std::move(y), {a}, [ia](Tape& t, Tape::Node& n) { t.accum_grad(ia, n.grad); });
}

Var sub(Var a, Var b) {
  Tape& t = *a.tape();
  check(a.val().same_shape(b.val()), "sub: shape mismatch");
  Tensor y = a.val().clone();
  axpy(y.numel(), -1.0, b.val().data(), y.data());
  const int ia = a.id(), ib = b.id();
  return t.emit(std::move(y), {a, b}, [ia, ib](Tape& t, Tape::Node& n) {
    t.accum_grad(ia, n.grad);
    Tensor g = n.grad.clone();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = -g[i];
    t.accum_grad_move(ib, std::move(g));
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var mul(Var a, Var b) {
  Tape& t = *a.tape();
  check(a.val().same_shape(b.val()), "mul: shape mismatch");
  Tensor y(a.val().shape());
  const double* pa = a.val().data();
  const double* pb = b.val().data();
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = pa[i] * pb[i];
  const int ia = a.id(), ib = b.id();
  Tensor av = a.val(), bv = b.val();
  return t.emit(std::move(y), {a, b}, [ia, ib, av, bv](Tape& t, Tape::Node& n) {
    Tensor ga(av.shape()), gb(av.shape());
    for (int64_t i = 0; i < ga.numel(); ++i) {
      ga[i] = n.grad[i] * bv[i];
      gb[i] = n.grad[i] * av[i];
    }
    t.accum_grad_move(ia, std::move(ga));
    t.accum_grad_move(ib, std::move(gb));
  });
}

Var mul_const(Var a, const Tensor& c) {
  Tape& t = *a.tape();
  check(a.val().same_shape(c), "mul_const: shape mismatch");
  Tensor y(a.val().shape());
  const double* pa = a.val().data();
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = pa[i] * c[i];
  const int ia = a.id();
  Tensor cv = c;
  return t.emit(std::move(y), {a}, [ia, cv](Tape& t, Tape::Node& n) {
    Tensor g(n.grad.shape());
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * cv[i];
    t.accum_grad_move(ia, std::move(g));
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape();
  Tensor y = a.val().clone();
  for (int64_t i = 0; i < y.numel(); ++i) y[i] *= s;
  const int ia = a.id();
  return t.emit(std::move(y), {a}, [ia, s](Tape& t, Tape::Node& n) {
    Tensor g = n.grad.clone();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= s;
    t.accum_grad_move(ia, std::move(g));
  });
}

Var add_scalar(Var a, double s) {
  Tape& t = *a.tape();
  Tensor y = a.val().clone();
  for (int64_t i = 0; i < y.numel(); ++i) y[i] += s;
  const int ia = a.id();
  return t.emit(std::move(y), {a}, [ia](Tape& t, Tape::Node& n) { t.accum_grad(ia, n.grad); });
}

Var relu(Var x) {
  Tape& t = *x.tape();
  Tensor y = x.val().clone();
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = y[i] > 0.0 ? y[i] : 0.0;
  const int ix = x.id();
  Tensor xv = x.val();
  return t.emit(std::move(y), {x}, [ix, xv](Tape& t, Tape::Node& n) {
    Tensor g(n.grad.shape());
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = xv[i] > 0.0 ? n.grad[i] : 0.0;
    t.accum_grad_move(ix, std::move(g));
  });
}

Var gelu(Var x) {
  Tape& t = *x.tape();
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  Tensor y(x.val().shape());
  const double* px = x.val().data();
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = 0.5 * px[i] * (1.0 + std::erf(px[i] * kInvSqrt2));
  const int ix = x.id();
  Tensor xv = x.val();
  return t.emit(std::move(y), {x}, [ix, xv](Tape& t, Tape::Node& n) {
    Tensor g(n.grad.shape());
    for (int64_t i = 0; i < g.numel(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      g[i] = n.grad[i] * (cdf + v * kInvSqrt2Pi * std::exp(-0.5 * v * v));
    }
    t.accum_grad_move(ix, std::move(g));
  });
}

Var vsigmoid(Var x) {
  Tape& t = *x.tape();
  Tensor y(x.val().shape());
  const double* px = x.val().data();
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = 1.0 / (1.0 + std::exp(-px[i]));
  const int ix = x.id();
  Tensor yv = y;
  return t.emit(std::move(y), {x}, [ix, yv](Tape& t, Tape::Node& n) {
    Tensor g(n.grad.shape());
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * yv[i] * (1.0 - yv[i]);
    t.accum_grad_move(ix, std::move(g));
  });
}

Var vsqrt(Var x) {
  Tape& t = *x.tape();
  Tensor y(x.val().shape());
  const double* px = x.val().data();
  for (int64_t i = 0; i < y.numel(); ++i) {
    if (px[i] < 0.0) throw NumericError("sqrt of negative value");
    y[i] = std::sqrt(px[i]);
  }
  const int ix = x.id();
  Tensor yv = y;
  return t.emit(std::move(y), {x}, [ix, yv](Tape& t, Tape::Node& n) {
    Tensor g(n.grad.shape());
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * 0.5 / yv[i];
    t.accum_grad_move(ix, std::move(g));
  });
}

Var vlog_masked(Var x, const Tensor& mask) {
  Tape& t = *x.tape();
  check(x.val().same_shape(mask), "vlog_masked: mask shape mismatch");
  Tensor y(x.val().shape());
  const double* px = x.val().data();
  for (int64_t i = 0; i < y.numel(); ++i) {
    if (mask[i] > 0.5) {
      if (px[i] <= 0.0) throw NumericError("log of non-positive height at a valid pixel");
      y[i] = std::log(px[i]);
    } else {
      y[i] = 0.0;
    }
  }
  const int ix = x.id();
  Tensor xv = x.val(), mv = mask;
  return t.emit(std::move(y), {x}, [ix, xv, mv](Tape& t, Tape::Node& n) {
    Tensor g(n.grad.shape());
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = mv[i] > 0.5 ? n.grad[i] / xv[i] : 0.0;
    t.accum_grad_move(ix, std::move(g));
  });
}

// ------------------------------------------------------------ linear algebra

Var matmul(Var a, Var b, bool ta, bool tb) {
  Tape& t = *a.tape();
  check(a.val().ndim() == 2 && b.val().ndim() == 2, "matmul: expects 2-D operands");
  const int64_t m = ta ? a.val().dim(1) : a.val().dim(0);
  const int64_t ka = ta ? a.val().dim(0) : a.val().dim(1);
  const int64_t kb = tb ? b.val().dim(1) : b.val().dim(0);
  const int64_t nn = tb ? b.val().dim(0) : b.val().dim(1);
  check(ka == kb, "matmul: inner dimension mismatch");
  Tensor y({m, nn});
  gemm(ta, tb, m, nn, ka, 1.0, a.val().data(), b.val().data(), 0.0, y.data());
  const int ia = a.id(), ib = b.id();
  Tensor av = a.val(), bv = b.val();
  const int64_t k = ka;
  return t.emit(std::move(y), {a, b}, [=](Tape& t, Tape::Node& n) {
    if (t.node(ia).requires_grad) {
      Tensor ga(av.shape());
      if (!ta) {
        gemm(false, !tb, m, k, nn, 1.0, n.grad.data(), bv.data(), 0.0, ga.data());
      } else {
        gemm(tb, true, k, m, nn, 1.0, bv.data(), n.grad.data(), 0.0, ga.data());
      }
      t.accum_grad_move(ia, std::move(ga));
    }
    if (t.node(ib).requires_grad) {
      Tensor gb(bv.shape());
      if (!tb) {
        gemm(!ta, false, k, nn, m, 1.0, av.data(), n.grad.data(), 0.0, gb.data());
      } else {
        gemm(true, ta, nn, k, m, 1.0, n.grad.data(), av.data(), 0.0, gb.data());
      }
      t.accum_grad_move(ib, std::move(gb));
    }
  });
}

Var bmatmul(Var a, Var b, bool ta, bool tb) {
  Tape& t = *a.tape();
  check(a.val().ndim() == 3 && b.val().ndim() == 3, "bmatmul: expects 3-D operands");
  check(a.val().dim(0) == b.val().dim(0), "bmatmul: batch mismatch");
  const int64_t bs = a.val().dim(0);
  const int64_t m = ta ? a.val().dim(2) : a.val().dim(1);
  const int64_t k = ta ? a.val().dim(1) : a.val().dim(2);
  const int64_t kb = tb ? b.val().dim(2) : b.val().dim(1);
  const int64_t nn = tb ? b.val().dim(1) : b.val().dim(2);
  check(k == kb, "bmatmul: inner dimension mismatch");
  Tensor y({bs, m, nn});
  const int64_t sa = a.val().dim(1) * a.val().dim(2);
  const int64_t sb = b.val().dim(1) * b.val().dim(2);
  const int64_t sy = m * nn;
  for (int64_t i = 0; i < bs; ++i)
    gemm(ta, tb, m, nn, k, 1.0, a.val().data() + i * sa, b.val().data() + i * sb, 0.0, y.data() + i * sy);
  const int ia = a.id(), ib = b.id();
  Tensor av = a.val(), bv = b.val();
  return t.emit(std::move(y), {a, b}, [=](Tape& t, Tape::Node& n) {
    if (t.node(ia).requires_grad) {
      Tensor ga(av.shape());
      for (int64_t i = 0; i < bs; ++i) {
        const double* gy = n.grad.data() + i * sy;
        const double* pb = bv.data() + i * sb;
        double* pga = ga.data() + i * sa;
        if (!ta) {
          gemm(false, !tb, m, k, nn, 1.0, gy, pb, 0.0, pga);
        } else {
          gemm(tb, true, k, m, nn, 1.0, pb, gy, 0.0, pga);
        }
      }
      t.accum_grad_move(ia, std::move(ga));
    }
    if (t.node(ib).requires_grad) {
      Tensor gb(bv.shape());
      for (int64_t i = 0; i < bs; ++i) {
        const double* gy = n.grad.data() + i * sy;
        const double* pa = av.data() + i * sa;
        double* pgb = gb.data() + i * sb;
        if (!tb) {
          gemm(!ta, false, k, nn, m, 1.0, pa, gy, 0.0, pgb);
        } else {
          gemm(true, ta, nn, k, m, 1.0, gy, pa, 0.0, pgb);
        }
      }
      t.accum_grad_move(ib, std::move(gb));
    }
  });
}

Var linear(Var x, Var w, Var b) {
  Tape& t = *x.tape();
  check(w.val().ndim() == 2, "linear: weight must be [out, in]");
  const int64_t in = w.val().dim(1);
  const int64_t out = w.val().dim(0);
  check(x.val().dim(x.val().ndim() - 1) == in, "linear: input width " +
        std::to_string(x.val().dim(x.val().ndim() - 1)) + " != weight in " + std::to_string(in));
  const int64_t rows = x.val().numel() / in;
  std::vector<int64_t> out_shape = x.val().shape();
  out_shape.back() = out;
  Tensor y({rows, out});
  gemm(false, true, rows, out, in, 1.0, x.val().data(), w.val().data(), 0.0, y.data());
  if (b.defined()) {
    check(b.val().numel() == out, "linear: bias size mismatch");
    for (int64_t r = 0; r < rows; ++r) axpy(out, 1.0, b.val().data(), y.data() + r * out);
  }
  const int ix = x.id(), iw = w.id(), ib = b.defined() ? b.id() : -1;
  Tensor xv = x.val(), wv = w.val();
  std::vector<Var> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  Var yv = t.emit(std::move(y), parents, [=](Tape& t, Tape::Node& n) {
    if (t.node(ix).requires_grad) {
      Tensor gx(xv.shape());
      gemm(false, false, rows, in, out, 1.0, n.grad.data(), wv.data(), 0.0, gx.data());
      t.accum_grad_move(ix, std::move(gx));
    }
    if (t.node(iw).requires_grad) {
      Tensor gw(wv.shape());
      gemm(true, false, out, in, rows, 1.0, n.grad.data(), xv.data(), 0.0, gw.data());
      t.accum_grad_move(iw, std::move(gw));
    }
    if (ib >= 0 && t.node(ib).requires_grad) {
      Tensor gb({out});
      for (int64_t r = 0; r < rows; ++r) axpy(out, 1.0, n.grad.data() + r * out, gb.data());
      t.accum_grad_move(ib, std::move(gb));
    }
  });
  return reshape(yv, out_shape);
}

// -------------------------------------------------------------------- shape

Var reshape(Var x, std::vector<int64_t> shape) {
  Tape& t = *x.tape();
  Tensor y = x.val().reshaped(shape);
  const int ix = x.id();
  std::vector<int64_t> in_shape = x.val().shape();
  return t.emit(std::move(y), {x}, [ix, in_shape](Tape& t, Tape::Node& n) {
    t.accum_grad(ix, n.grad.reshaped(in_shape));
  });
}

Var permute(Var x, std::vector<int> axes) {
  Tape& t = *x.tape();
  Tensor y = permute_tensor(x.val(), axes);
  const int ix = x.id();
  const std::vector<int> inv = inverse_axes(axes);
  return t.emit(std::move(y), {x}, [ix, inv](Tape& t, Tape::Node& n) {
    t.accum_grad_move(ix, permute_tensor(n.grad, inv));
  });
}

Var concat_lastdim(const std::vector<Var>& xs) {
  check(!xs.empty(), "concat_lastdim: empty input list");
  Tape& t = *xs[0].tape();
  std::vector<int64_t> shape = xs[0].val().shape();
  const int nd = static_cast<int>(shape.size());
  int64_t total_c = 0;
  std::vector<int64_t> widths;
  for (const Var& v : xs) {
    check(v.val().ndim() == nd, "concat_lastdim: rank mismatch");
    for (int d = 0; d + 1 < nd; ++d) check(v.val().dim(d) == shape[d], "concat_lastdim: leading shape mismatch");
    widths.push_back(v.val().dim(nd - 1));
    total_c += widths.back();
  }
  std::vector<int64_t> out_shape = shape;
  out_shape[nd - 1] = total_c;
  const int64_t rows = numel_of(out_shape) / total_c;
  Tensor y(out_shape);
  int64_t off = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    const double* src = xs[i].val().data();
    for (int64_t r = 0; r < rows; ++r)
      std::memcpy(y.data() + r * total_c + off, src + r * widths[i], static_cast<size_t>(widths[i]) * sizeof(double));
    off += widths[i];
  }
  std::vector<int> ids;
  std::vector<int64_t> in_shapes_flat;
  for (const Var& v : xs) ids.push_back(v.id());
  std::vector<std::vector<int64_t>> in_shapes;
  for (const Var& v : xs) in_shapes.push_back(v.val().shape());
  return t.emit(std::move(y), xs, [ids, widths, in_shapes, rows, total_c](Tape& t, Tape::Node& n) {
    int64_t off = 0;
    for (size_t i = 0; i < ids.size(); ++i) {
      if (t.node(ids[i]).requires_grad) {
        Tensor g(in_shapes[i]);
        for (int64_t r = 0; r < rows; ++r)
          std::memcpy(g.data() + r * widths[i], n.grad.data() + r * total_c + off,
                      static_cast<size_t>(widths[i]) * sizeof(double));
        t.accum_grad_move(ids[i], std::move(g));
      }
      off += widths[i];
    }
  });
}

Var slice_lastdim(Var x, int64_t start, int64_t len) {
  Tape& t = *x.tape();
  const int nd = x.val().ndim();
  const int64_t c = x.val().dim(nd - 1);
  check(start >= 0 && start + len <= c, "slice_lastdim: out of range");
  std::vector<int64_t> out_shape = x.val().shape();
  out_shape[nd - 1] = len;
  const int64_t rows = x.val().numel() / c;
  Tensor y(out_shape);
  for (int64_t r = 0; r < rows; ++r)
    std::memcpy(y.data() + r * len, x.val().data() + r * c + start, static_cast<size_t>(len) * sizeof(double));
  const int ix = x.id();
  std::vector<int64_t> in_shape = x.val().shape();
  return t.emit(std::move(y), {x}, [=](Tape& t, Tape::Node& n) {
    Tensor g(in_shape);
    for (int64_t r = 0; r < rows; ++r)
      std::memcpy(g.data() + r * c + start, n.grad.data() + r * len, static_cast<size_t>(len) * sizeof(double));
    t.accum_grad_move(ix, std::move(g));
  });
}

// ------------------------------------------------------------------ spatial

namespace {
constexpr int64_t kConvStripBytes = 32ll << 20;

struct ConvDims {
  int64_t h, w, c, kh, kw, oc, oh, ow;
  int stride, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  ConvDims d;
  d.h = x.dim(0);
  d.w = x.dim(1);
  d.c = x.dim(2);
  d.kh = w.dim(0);
  d.kw = w.dim(1);
  check(w.dim(2) == d.c, "conv2d: weight input channels mismatch");
  d.oc = w.dim(3);
  d.stride = stride;
  d.pad = pad;
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  check(d.oh >= 1 && d.ow >= 1, "conv2d: output would be empty");
  return d;
}

// Fills the im2col strip for output rows [r0, r1).
void im2col_strip(const Tensor& x, const ConvDims& d, int64_t r0, int64_t r1, std::vector<double>& col) {
  const int64_t kkc = d.kh * d.kw * d.c;
  col.assign(static_cast<size_t>((r1 - r0) * d.ow * kkc), 0.0);
  const double* src = x.data();
  for (int64_t oy = r0; oy < r1; ++oy) {
    for (int64_t ox = 0; ox < d.ow; ++ox) {
      double* row = col.data() + ((oy - r0) * d.ow + ox) * kkc;
      for (int64_t ky = 0; ky < d.kh; ++ky) {
        const int64_t iy = oy * d.stride - d.pad + ky;
        if (iy < 0 || iy >= d.h) continue;
        for (int64_t kx = 0; kx < d.kw; ++kx) {
          const int64_t ix = ox * d.stride - d.pad + kx;
          if (ix < 0 || ix >= d.w) continue;
          std::memcpy(row + (ky * d.kw + kx) * d.c, src + (iy * d.w + ix) * d.c,
                      static_cast<size_t>(d.c) * sizeof(double));
        }
      }
    }
  }
}

int64_t conv_strip_rows(const ConvDims& d) {
  const int64_t kkc = d.kh * d.kw * d.c;
  const int64_t bytes_per_row = d.ow * kkc * static_cast<int64_t>(sizeof(double));
  return std::max<int64_t>(1, kConvStripBytes / std::max<int64_t>(1, bytes_per_row));
}
}  // namespace

Var conv2d(Var x, Var w, Var b, int stride, int pad) {
  Tape& t = *x.tape();
  check(x.val().ndim() == 3 && w.val().ndim() == 4, "conv2d: expects x[H,W,C], w[kh,kw,C,OC]");
  const ConvDims d = conv_dims(x.val(), w.val(), stride, pad);
  const int64_t kkc = d.kh * d.kw * d.c;
  Tensor y({d.oh, d.ow, d.oc});
  const int64_t strip = conv_strip_rows(d);
  std::vector<double> col;
  for (int64_t r0 = 0; r0 < d.oh; r0 += strip) {
    const int64_t r1 = std::min(d.oh, r0 + strip);
    im2col_strip(x.val(), d, r0, r1, col);
    gemm(false, false, (r1 - r0) * d.ow, d.oc, kkc, 1.0, col.data(), w.val().data(), 0.0,
         y.data() + r0 * d.ow * d.oc);
  }
  if (b.defined()) {
    check(b.val().numel() == d.oc, "conv2d: bias size mismatch");
    for (int64_t r = 0; r < d.oh * d.ow; ++r) axpy(d.oc, 1.0, b.val().data(), y.data() + r * d.oc);
  }

  const int ix = x.id(), iw = w.id(), ib = b.defined() ? b.id() : -1;
  Tensor xv = x.val(), wv = w.val();
  std::vector<Var> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  return t.emit(std::move(y), parents, [=](Tape& t, Tape::Node& n) {
    const bool need_x = t.node(ix).requires_grad;
    const bool need_w = t.node(iw).requires_grad;
    Tensor gx, gw;
    if (need_x) gx = Tensor::zeros(xv.shape());
    if (need_w) gw = Tensor::zeros(wv.shape());
    const int64_t strip = conv_strip_rows(d);
    std::vector<double> col, dcol;
    for (int64_t r0 = 0; r0 < d.oh; r0 += strip) {
      const int64_t r1 = std::min(d.oh, r0 + strip);
      const int64_t rows = (r1 - r0) * d.ow;
      const double* gy = n.grad.data() + r0 * d.ow * d.oc;
      if (need_w) {
        im2col_strip(xv, d, r0, r1, col);
        gemm(true, false, kkc, d.oc, rows, 1.0, col.data(), gy, 1.0, gw.data());
      }
      if (need_x) {
        dcol.assign(static_cast<size_t>(rows * kkc), 0.0);
        gemm(false, true, rows, kkc, d.oc, 1.0, gy, wv.data(), 0.0, dcol.data());
        // col2im scatter-add
        for (int64_t oy = r0; oy < r1; ++oy) {
          for (int64_t ox = 0; ox < d.ow; ++ox) {
            const double* row = dcol.data() + ((oy - r0) * d.ow + ox) * kkc;
            for (int64_t ky = 0; ky < d.kh; ++ky) {
              const int64_t iy = oy * d.stride - d.pad + ky;
              if (iy < 0 || iy >= d.h) continue;
              for (int64_t kx = 0; kx < d.kw; ++kx) {
                const int64_t ix2 = ox * d.stride - d.pad + kx;
                if (ix2 < 0 || ix2 >= d.w) continue;
                axpy(d.c, 1.0, row + (ky * d.kw + kx) * d.c, gx.data() + (iy * d.w + ix2) * d.c);
              }
            }
          }
        }
      }
    }
    if (need_w) t.accum_grad_move(iw, std::move(gw));
    if (need_x) t.accum_grad_move(ix, std::move(gx));
    if (ib >= 0 && t.node(ib).requires_grad) {
      Tensor gb({d.oc});
      for (int64_t r = 0; r < d.oh * d.ow; ++r) axpy(d.oc, 1.0, n.grad.data() + r * d.oc, gb.data());
      t.accum_grad_move(ib, std::move(gb));
    }
  });
}

Var maxpool2d(Var x, int k, int stride, int pad) {
  Tape& t = *x.tape();
  const int64_t h = x.val().dim(0), w = x.val().dim(1), c = x.val().dim(2);
  const int64_t oh = (h + 2 * pad - k) / stride + 1;
  const int64_t ow = (w + 2 * pad - k) / stride + 1;
  Tensor y({oh, ow, c});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(oh * ow * c), -1);
  const double* src = x.val().data();
  for (int64_t oy = 0; oy < oh; ++oy) {
    for (int64_t ox = 0; ox < ow; ++ox) {
      for (int64_t ch = 0; ch < c; ++ch) {
        double best = -1e300;
        int64_t best_idx = -1;
        for (int ky = 0; ky < k; ++ky) {
          const int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int64_t ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            const double v = src[(iy * w + ix) * c + ch];
            if (v > best) {
              best = v;
              best_idx = (iy * w + ix) * c + ch;
            }
          }
        }
        y.at(oy, ox, ch) = best;
        (*argmax)[static_cast<size_t>((oy * ow + ox) * c + ch)] = best_idx;
      }
    }
  }
  const int ix = x.id();
  std::vector<int64_t> in_shape = x.val().shape();
  return t.emit(std::move(y), {x}, [ix, argmax, in_shape](Tape& t, Tape::Node& n) {
    Tensor g(in_shape);
    for (int64_t i = 0; i < n.grad.numel(); ++i) {
      const int64_t src = (*argmax)[static_cast<size_t>(i)];
      if (src >= 0) g[src] += n.grad[i];
    }
    t.accum_grad_move(ix, std::move(g));
  });
}

Var global_avgpool(Var x) {
  Tape& t = *x.tape();
  const int64_t h = x.val().dim(0), w = x.val().dim(1), c = x.val().dim(2);
  const int64_t hw = h * w;
  Tensor y({c});
  const double* src = x.val().data();
  for (int64_t i = 0; i < hw; ++i) axpy(c, 1.0, src + i * c, y.data());
  for (int64_t ch = 0; ch < c; ++ch) y[ch] /= static_cast<double>(hw);
  const int ix = x.id();
  std::vector<int64_t> in_shape = x.val().shape();
  return t.emit(std::move(y), {x}, [ix, in_shape, hw, c](Tape& t, Tape::Node& n) {
    Tensor g(in_shape);
    for (int64_t i = 0; i < hw; ++i)
      for (int64_t ch = 0; ch < c; ++ch) g[i * c + ch] = n.grad[ch] / static_cast<double>(hw);
    t.accum_grad_move(ix, std::move(g));
  });
}

Var global_maxpool(Var x) {
  Tape& t = *x.tape();
  const int64_t h = x.val().dim(0), w = x.val().dim(1), c = x.val().dim(2);
  const int64_t hw = h * w;
  Tensor y({c});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(c), 0);
  const double* src = x.val().data();
  for (int64_t ch = 0; ch < c; ++ch) {
    double best = src[ch];
    int64_t bi = 0;
    for (int64_t i = 1; i < hw; ++i) {
      const double v = src[i * c + ch];
      if (v > best) {
        best = v;
        bi = i;
      }
    }
    y[ch] = best;
    (*argmax)[static_cast<size_t>(ch)] = bi;
  }
  const int ix = x.id();
  std::vector<int64_t> in_shape = x.val().shape();
  return t.emit(std::move(y), {x}, [ix, argmax, in_shape, c](Tape& t, Tape::Node& n) {
    Tensor g(in_shape);
    for (int64_t ch = 0; ch < c; ++ch) g[(*argmax)[static_cast<size_t>(ch)] * c + ch] += n.grad[ch];
    t.accum_grad_move(ix, std::move(g));
  });
}

Var adaptive_avgpool2d(Var x, int out_h, int out_w) {
  Tape& t = *x.tape();
  const int64_t h = x.val().dim(0), w = x.val().dim(1), c = x.val().dim(2);
  Tensor y({out_h, out_w, c});
  auto bound = [](int64_t o, int64_t n, int64_t outn, bool end) {
    return end ? ((o + 1) * n + outn - 1) / outn : (o * n) / outn;
  };
  const double* src = x.val().data();
  for (int64_t oy = 0; oy < out_h; ++oy) {
    const int64_t y0 = bound(oy, h, out_h, false), y1 = bound(oy, h, out_h, true);
    for (int64_t ox = 0; ox < out_w; ++ox) {
      const int64_t x0 = bound(ox, w, out_w, false), x1 = bound(ox, w, out_w, true);
      double* dst = y.data() + (oy * out_w + ox) * c;
      for (int64_t iy = y0; iy < y1; ++iy)
        for (int64_t ix = x0; ix < x1; ++ix) axpy(c, 1.0, src + (iy * w + ix) * c, dst);
      const double inv = 1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
      for (int64_t ch = 0; ch < c; ++ch) dst[ch] *= inv;
    }
  }
  const int ixid = x.id();
  std::vector<int64_t> in_shape = x.val().shape();
  return t.emit(std::move(y), {x}, [=](Tape& t, Tape::Node& n) {
    Tensor g(in_shape);
    for (int64_t oy = 0; oy < out_h; ++oy) {
      const int64_t y0 = bound(oy, h, out_h, false), y1 = bound(oy, h, out_h, true);
      for (int64_t ox = 0; ox < out_w; ++ox) {
        const int64_t x0 = bound(ox, w, out_w, false), x1 = bound(ox, w, out_w, true);
        const double inv = 1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
        const double* gy = n.grad.data() + (oy * out_w + ox) * c;
        for (int64_t iy = y0; iy < y1; ++iy)
          for (int64_t ix = x0; ix < x1; ++ix) axpy(c, inv, gy, g.data() + (iy * w + ix) * c);
      }
    }
    t.accum_grad_move(ixid, std::move(g));
  });
}

Var upsample_bilinear(Var x, int out_h, int out_w) {
  Tape& t = *x.tape();
  const int64_t h = x.val().dim(0), w = x.val().dim(1), c = x.val().dim(2);
  Tensor y({out_h, out_w, c});
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  auto src_coord = [](int64_t o, double s, int64_t n) {
    double v = (static_cast<double>(o) + 0.5) * s - 0.5;
    if (v < 0.0) v = 0.0;
    if (v > static_cast<double>(n - 1)) v = static_cast<double>(n - 1);
    return v;
  };
  const double* src = x.val().data();
  for (int64_t oy = 0; oy < out_h; ++oy) {
    const double fy = src_coord(oy, sy, h);
    const int64_t y0 = static_cast<int64_t>(fy);
    const int64_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (int64_t ox = 0; ox < out_w; ++ox) {
      const double fx = src_coord(ox, sx, w);
      const int64_t x0 = static_cast<int64_t>(fx);
      const int64_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      double* dst = y.data() + (oy * out_w + ox) * c;
      const double w00 = (1 - wy) * (1 - wx), w01 = (1 - wy) * wx, w10 = wy * (1 - wx), w11 = wy * wx;
      const double* p00 = src + (y0 * w + x0) * c;
      const double* p01 = src + (y0 * w + x1) * c;
      const double* p10 = src + (y1 * w + x0) * c;
      const double* p11 = src + (y1 * w + x1) * c;
      for (int64_t ch = 0; ch < c; ++ch)
        dst[ch] = w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch];
    }
  }
  const int ixid = x.id();
  std::vector<int64_t> in_shape = x.val().shape();
  return t.emit(std::move(y), {x}, [=](Tape& t, Tape::Node& n) {
    Tensor g(in_shape);
    for (int64_t oy = 0; oy < out_h; ++oy) {
      const double fy = src_coord(oy, sy, h);
      const int64_t y0 = static_cast<int64_t>(fy);
      const int64_t y1 = std::min(y0 + 1, h - 1);
      const double wy = fy - static_cast<double>(y0);
      for (int64_t ox = 0; ox < out_w; ++ox) {
        const double fx = src_coord(ox, sx, w);
        const int64_t x0 = static_cast<int64_t>(fx);
        const int64_t x1 = std::min(x0 + 1, w - 1);
        const double wx = fx - static_cast<double>(x0);
        const double* gy = n.grad.data() + (oy * out_w + ox) * c;
        const double w00 = (1 - wy) * (1 - wx), w01 = (1 - wy) * wx, w10 = wy * (1 - wx), w11 = wy * wx;
        axpy(c, w00, gy, g.data() + (y0 * w + x0) * c);
        axpy(c, w01, gy, g.data() + (y0 * w + x1) * c);
        axpy(c, w10, gy, g.data() + (y1 * w + x0) * c);
        axpy(c, w11, gy, g.data() + (y1 * w + x1) * c);
      }
    }
    t.accum_grad_move(ixid, std::move(g));
  });
}

Var roll2d(Var x, int64_t dy, int64_t dx) {
  Tape& t = *x.tape();
  check(x.val().ndim() == 3, "roll2d: expects [H,W,C]");
  Tensor y = roll_tensor(x.val(), dy, dx);
  const int ix = x.id();
  return t.emit(std::move(y), {x}, [ix, dy, dx](Tape& t, Tape::Node& n) {
    t.accum_grad_move(ix, roll_tensor(n.grad, -dy, -dx));
  });
}

Var pad2d(Var x, int top, int bottom, int left, int right) {
  Tape& t = *x.tape();
  const int64_t h = x.val().dim(0), w = x.val().dim(1), c = x.val().dim(2);
  const int64_t oh = h + top + bottom, ow = w + left + right;
  Tensor y({oh, ow, c});
  for (int64_t i = 0; i < h; ++i)
    std::memcpy(y.data() + ((i + top) * ow + left) * c, x.val().data() + i * w * c,
                static_cast<size_t>(w * c) * sizeof(double));
  const int ix = x.id();
  return t.emit(std::move(y), {x}, [=](Tape& t, Tape::Node& n) {
    Tensor g({h, w, c});
    for (int64_t i = 0; i < h; ++i)
      std::memcpy(g.data() + i * w * c, n.grad.data() + ((i + top) * ow + left) * c,
                  static_cast<size_t>(w * c) * sizeof(double));
    t.accum_grad_move(ix, std::move(g));
  });
}

Var crop2d(Var x, int64_t top, int64_t left, int64_t h, int64_t w) {
  Tape& t = *x.tape();
  const int64_t ih = x.val().dim(0), iw = x.val().dim(1), c = x.val().dim(2);
  check(top >= 0 && left >= 0 && top + h <= ih && left + w <= iw, "crop2d: window out of range");
  Tensor y({h, w, c});
  for (int64_t i = 0; i < h; ++i)
    std::memcpy(y.data() + i * w * c, x.val().data() + ((i + top) * iw + left) * c,
                static_cast<size_t>(w * c) * sizeof(double));
  const int ix = x.id();
  return t.emit(std::move(y), {x}, [=](Tape& t, Tape::Node& n) {
    Tensor g({ih, iw, c});
    for (int64_t i = 0; i < h; ++i)
      std::memcpy(g.data() + ((i + top) * iw + left) * c, n.grad.data() + i * w * c,
                  static_cast<size_t>(w * c) * sizeof(double));
    t.accum_grad_move(ix, std::move(g));
  });
}

Var stride2_slice2d(Var x, int oy, int ox) {
  Tape& t = *x.tape();
  const int64_t h = x.val().dim(0), w = x.val().dim(1), c = x.val().dim(2);
  check(h % 2 == 0 && w % 2 == 0, "stride2_slice2d: dims must be even");
  const int64_t oh = h / 2, ow = w / 2;
  Tensor y({oh, ow, c});
  for (int64_t i = 0; i < oh; ++i)
    for (int64_t j = 0; j < ow; ++j)
      std::memcpy(y.data() + (i * ow + j) * c, x.val().data() + ((2 * i + oy) * w + 2 * j + ox) * c,
                  static_cast<size_t>(c) * sizeof(double));
  const int ix = x.id();
  return t.emit(std::move(y), {x}, [=](Tape& t, Tape::Node& n) {
    Tensor g({h, w, c});
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j)
        std::memcpy(g.data() + ((2 * i + oy) * w + 2 * j + ox) * c, n.grad.data() + (i * ow + j) * c,
                    static_cast<size_t>(c) * sizeof(double));
    t.accum_grad_move(ix, std::move(g));
  });
}

Var mul_channels(Var x, Var w) {
  Tape& t = *x.tape();
  const int64_t h = x.val().dim(0), ww = x.val().dim(1), c = x.val().dim(2);
  check(w.val().numel() == c, "mul_channels: weight size mismatch");
  Tensor y(x.val().shape());
  const double* px = x.val().data();
  const double* pw = w.val().data();
  for (int64_t i = 0; i < h * ww; ++i)
    for (int64_t ch = 0; ch < c; ++ch) y[i * c + ch] = px[i * c + ch] * pw[ch];
  const int ix = x.id(), iw = w.id();
  Tensor xv = x.val(), wv = w.val();
  return t.emit(std::move(y), {x, w}, [=](Tape& t, Tape::Node& n) {
    if (t.node(ix).requires_grad) {
      Tensor gx(xv.shape());
      for (int64_t i = 0; i < h * ww; ++i)
        for (int64_t ch = 0; ch < c; ++ch) gx[i * c + ch] = n.grad[i * c + ch] * wv[ch];
      t.accum_grad_move(ix, std::move(gx));
    }
    if (t.node(iw).requires_grad) {
      Tensor gw({c});
      for (int64_t i = 0; i < h * ww; ++i)
        for (int64_t ch = 0; ch < c; ++ch) gw[ch] += n.grad[i * c + ch] * xv[i * c + ch];
      t.accum_grad_move(iw, std::move(gw));
    }
  });
}

// --------------------------------------------------- normalization/attention

Var softmax_lastdim(Var x) {
  Tape& t = *x.tape();
  const int nd = x.val().ndim();
  const int64_t k = x.val().dim(nd - 1);
  const int64_t rows = x.val().numel() / k;
  Tensor y(x.val().shape());
  const double* src = x.val().data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* in = src + r * k;
    double* out = y.data() + r * k;
    double mx = in[0];
    for (int64_t i = 1; i < k; ++i) mx = std::max(mx, in[i]);
    double sum = 0.0;
    for (int64_t i = 0; i < k; ++i) {
      out[i] = std::exp(in[i] - mx);
      sum += out[i];
    }
    const double inv = 1.0 / sum;
    for (int64_t i = 0; i < k; ++i) out[i] *= inv;
  }
  const int ix = x.id();
  Tensor yv = y;
  return t.emit(std::move(y), {x}, [ix, yv, rows, k](Tape& t, Tape::Node& n) {
    Tensor g(yv.shape());
    for (int64_t r = 0; r < rows; ++r) {
      const double* py = yv.data() + r * k;
      const double* gy = n.grad.data() + r * k;
      double dot = 0.0;
      for (int64_t i = 0; i < k; ++i) dot += gy[i] * py[i];
      double* gx = g.data() + r * k;
      for (int64_t i = 0; i < k; ++i) gx[i] = py[i] * (gy[i] - dot);
    }
    t.accum_grad_move(ix, std::move(g));
  });
}

Var layernorm_lastdim(Var x, Var gamma, Var beta, double eps) {
  Tape& t = *x.tape();
  const int nd = x.val().ndim();
  const int64_t c = x.val().dim(nd - 1);
  check(gamma.val().numel() == c && beta.val().numel() == c, "layernorm: affine size mismatch");
  const int64_t rows = x.val().numel() / c;
  Tensor y(x.val().shape());
  Tensor xhat(x.val().shape());
  Tensor rstd({rows});
  const double* src = x.val().data();
  const double* pg = gamma.val().data();
  const double* pb = beta.val().data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* in = src + r * c;
    double mean = 0.0;
    for (int64_t i = 0; i < c; ++i) mean += in[i];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t i = 0; i < c; ++i) {
      const double d = in[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = rs;
    double* ph = xhat.data() + r * c;
    double* py = y.data() + r * c;
    for (int64_t i = 0; i < c; ++i) {
      ph[i] = (in[i] - mean) * rs;
      py[i] = pg[i] * ph[i] + pb[i];
    }
  }
  const int ix = x.id(), ig = gamma.id(), ibt = beta.id();
  Tensor gv = gamma.val();
  return t.emit(std::move(y), {x, gamma, beta}, [=](Tape& t, Tape::Node& n) {
    const bool need_x = t.node(ix).requires_grad;
    Tensor gx, ggamma, gbeta;
    if (need_x) gx = Tensor::zeros(xhat.shape());
    if (t.node(ig).requires_grad) ggamma = Tensor::zeros({c});
    if (t.node(ibt).requires_grad) gbeta = Tensor::zeros({c});
    for (int64_t r = 0; r < rows; ++r) {
      const double* gy = n.grad.data() + r * c;
      const double* ph = xhat.data() + r * c;
      if (ggamma.defined())
        for (int64_t i = 0; i < c; ++i) ggamma[i] += gy[i] * ph[i];
      if (gbeta.defined())
        for (int64_t i = 0; i < c; ++i) gbeta[i] += gy[i];
      if (need_x) {
        double m1 = 0.0, m2 = 0.0;
        for (int64_t i = 0; i < c; ++i) {
          const double dxh = gy[i] * gv[i];
          m1 += dxh;
          m2 += dxh * ph[i];
        }
        m1 /= static_cast<double>(c);
        m2 /= static_cast<double>(c);
        double* pgx = gx.data() + r * c;
        for (int64_t i = 0; i < c; ++i) {
          const double dxh = gy[i] * gv[i];
          pgx[i] = (dxh - m1 - ph[i] * m2) * rstd[r];
        }
      }
    }
    if (need_x) t.accum_grad_move(ix, std::move(gx));
    if (ggamma.defined()) t.accum_grad_move(ig, std::move(ggamma));
    if (gbeta.defined()) t.accum_grad_move(ibt, std::move(gbeta));
  });
}

Var add_window_mask(Var scores, const Tensor& mask, int heads) {
  Tape& t = *scores.tape();
  check(scores.val().ndim() == 3 && mask.ndim() == 3, "add_window_mask: expects 3-D tensors");
  const int64_t b = scores.val().dim(0);
  const int64_t tq = scores.val().dim(1), tk = scores.val().dim(2);
  check(mask.dim(1) == tq && mask.dim(2) == tk, "add_window_mask: token dims mismatch");
  check(b == mask.dim(0) * heads, "add_window_mask: batch != windows*heads");
  Tensor y = scores.val().clone();
  const int64_t win_sz = tq * tk;
  for (int64_t i = 0; i < b; ++i) axpy(win_sz, 1.0, mask.data() + (i / heads) * win_sz, y.data() + i * win_sz);
  const int is = scores.id();
  return t.emit(std::move(y), {scores}, [is](Tape& t, Tape::Node& n) { t.accum_grad(is, n.grad); });
}

// --------------------------------------------------------------- reductions

Var sum_all(Var x) {
  Tape& t = *x.tape();
  Tensor y = Tensor::scalar(x.val().sum());
  const int ix = x.id();
  std::vector<int64_t> in_shape = x.val().shape();
  return t.emit(std::move(y), {x}, [ix, in_shape](Tape& t, Tape::Node& n) {
    t.accum_grad_move(ix, Tensor::full(in_shape, n.grad[0]));
  });
}

Var mean_all(Var x) {
  const double inv = 1.0 / static_cast<double>(x.val().numel());
  return scale(sum_all(x), inv);
}

}  // namespace heightformer
