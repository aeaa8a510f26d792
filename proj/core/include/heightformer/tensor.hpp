#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace heightformer {

// Dense row-major double tensor. Copies are shallow (shared buffer);
// use clone() for a deep copy. reshaped() shares the buffer.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape);

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int64_t> shape, double v);
  static Tensor scalar(double v) { return full({1}, v); }
  static Tensor from(std::vector<int64_t> shape, std::vector<double> values);

  bool defined() const { return buf_ != nullptr; }
  int64_t numel() const;
  int ndim() const { return static_cast<int>(shape_.size()); }
  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }

  double* data() { return buf_->data(); }
  const double* data() const { return buf_->data(); }
  double& operator[](int64_t i) { return (*buf_)[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return (*buf_)[static_cast<size_t>(i)]; }

  double& at(int64_t i0, int64_t i1) { return (*buf_)[static_cast<size_t>(i0 * shape_[1] + i1)]; }
  double& at(int64_t i0, int64_t i1, int64_t i2) {
    return (*buf_)[static_cast<size_t>((i0 * shape_[1] + i1) * shape_[2] + i2)];
  }
  double at(int64_t i0, int64_t i1) const { return (*buf_)[static_cast<size_t>(i0 * shape_[1] + i1)]; }
  double at(int64_t i0, int64_t i1, int64_t i2) const {
    return (*buf_)[static_cast<size_t>((i0 * shape_[1] + i1) * shape_[2] + i2)];
  }

  Tensor reshaped(std::vector<int64_t> shape) const;
  Tensor clone() const;
  void fill(double v);
  void zero() { fill(0.0); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool shares_buffer(const Tensor& other) const { return buf_ == other.buf_; }

  double min() const;
  double max() const;
  double sum() const;
  bool all_finite() const;

  std::string shape_str() const;

 private:
  std::vector<int64_t> shape_;
  std::shared_ptr<std::vector<double>> buf_;
};

std::string shape_str(const std::vector<int64_t>& shape);
int64_t numel_of(const std::vector<int64_t>& shape);

// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C,
// with op(A) m x k and op(B) k x n. Backed by BLAS.
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, double alpha,
          const double* a, const double* b, double beta, double* c);

// y += a * x over n elements.
void axpy(int64_t n, double a, const double* x, double* y);

}  // namespace heightformer
