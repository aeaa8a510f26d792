#include "heightformer/tensor.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "heightformer/errors.hpp"

extern "C" void openblas_set_num_threads(int);

#include <malloc.h>

namespace heightformer {

namespace {
// The container exposes fewer CPUs than the host advertises; an
// over-subscribed BLAS pool burns its time in sched_yield. Large tensor
// buffers also default to mmap/munmap round trips, so raise the malloc
// thresholds to keep them reusable in the arena.
struct RuntimeInit {
  RuntimeInit() {
    openblas_set_num_threads(1);
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
  }
};
const RuntimeInit runtime_init;
}  // namespace

int64_t numel_of(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
  for (int64_t d : shape_) {
    if (d < 0) throw ShapeError("negative tensor dimension in " + heightformer::shape_str(shape_));
  }
  buf_ = std::make_shared<std::vector<double>>(static_cast<size_t>(numel_of(shape_)), 0.0);
}

Tensor Tensor::full(std::vector<int64_t> shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::from(std::vector<int64_t> shape, std::vector<double> values) {
  if (numel_of(shape) != static_cast<int64_t>(values.size()))
    throw ShapeError("Tensor::from: value count does not match shape " + heightformer::shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.buf_ = std::make_shared<std::vector<double>>(std::move(values));
  return t;
}

int64_t Tensor::numel() const { return buf_ ? static_cast<int64_t>(buf_->size()) : 0; }

Tensor Tensor::reshaped(std::vector<int64_t> shape) const {
  if (numel_of(shape) != numel())
    throw ShapeError("reshape from " + shape_str() + " to " + heightformer::shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.buf_ = buf_;
  return t;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  if (buf_) t.buf_ = std::make_shared<std::vector<double>>(*buf_);
  return t;
}

void Tensor::fill(double v) { std::fill(buf_->begin(), buf_->end(), v); }

double Tensor::min() const {
  return *std::min_element(buf_->begin(), buf_->end());
}

double Tensor::max() const {
  return *std::max_element(buf_->begin(), buf_->end());
}

double Tensor::sum() const {
  double s = 0.0;
  for (double v : *buf_) s += v;
  return s;
}

bool Tensor::all_finite() const {
  for (double v : *buf_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const { return heightformer::shape_str(shape_); }

namespace {

// The system OpenBLAS (0.3.20) returns wrong results from its "small
// matrix" dgemm kernels for some transposed shapes, so anything under its
// small-matrix threshold (m*n*k <= 1e6, with margin) is computed here with
// plain loops; only large products reach BLAS.
constexpr double kSmallGemmThreshold = 2e6;

void small_gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, double alpha,
                const double* a, const double* b, double beta, double* c) {
  if (beta == 0.0) {
    std::fill(c, c + m * n, 0.0);
  } else if (beta != 1.0) {
    for (int64_t i = 0; i < m * n; ++i) c[i] *= beta;
  }
  if (!trans_a && !trans_b) {
    for (int64_t i = 0; i < m; ++i)
      for (int64_t kk = 0; kk < k; ++kk) {
        const double av = alpha * a[i * k + kk];
        const double* br = b + kk * n;
        double* cr = c + i * n;
        for (int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
      }
  } else if (!trans_a && trans_b) {
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) {
        const double* ar = a + i * k;
        const double* br = b + j * k;
        double s = 0.0;
        for (int64_t kk = 0; kk < k; ++kk) s += ar[kk] * br[kk];
        c[i * n + j] += alpha * s;
      }
  } else if (trans_a && !trans_b) {
    for (int64_t kk = 0; kk < k; ++kk)
      for (int64_t i = 0; i < m; ++i) {
        const double av = alpha * a[kk * m + i];
        const double* br = b + kk * n;
        double* cr = c + i * n;
        for (int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
      }
  } else {
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (int64_t kk = 0; kk < k; ++kk) s += a[kk * m + i] * b[j * k + kk];
        c[i * n + j] += alpha * s;
      }
  }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, double alpha,
          const double* a, const double* b, double beta, double* c) {
  if (static_cast<double>(m) * static_cast<double>(n) * static_cast<double>(k) <= kSmallGemmThreshold) {
    small_gemm(trans_a, trans_b, m, n, k, alpha, a, b, beta, c);
    return;
  }
  const int lda = static_cast<int>(trans_a ? m : k);
  const int ldb = static_cast<int>(trans_b ? k : n);
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a, lda, b, ldb, beta, c,
              static_cast<int>(n));
}

void axpy(int64_t n, double a, const double* x, double* y) {
  cblas_daxpy(static_cast<int>(n), a, x, 1, y, 1);
}

}  // namespace heightformer
