#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "neurodyn/errors.hpp"
#include "neurodyn/rng.hpp"

namespace neurodyn {

// Dense row-major tensor of 64-bit floats.  Rank 0 is a scalar (numel 1).
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}

  explicit Tensor(std::vector<int64_t> dims) : dims_(std::move(dims)) {
    data_.assign(check_numel(dims_), 0.0);
  }

  Tensor(std::vector<int64_t> dims, std::vector<double> data)
      : dims_(std::move(dims)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != check_numel(dims_))
      throw DimensionError("tensor data size does not match dims");
  }

  static Tensor scalar(double v) {
    Tensor t;
    t.data_[0] = v;
    return t;
  }

  static Tensor full(std::vector<int64_t> dims, double v) {
    Tensor t(std::move(dims));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor randn(std::vector<int64_t> dims, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(dims));
    for (double& x : t.data_) x = stddev * rng.gaussian();
    return t;
  }

  const std::vector<int64_t>& dims() const { return dims_; }
  int64_t rank() const { return static_cast<int64_t>(dims_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  int64_t dim(int i) const { return dims_[static_cast<size_t>(i)]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * dims_[1] + j)]; }
  double at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * dims_[1] + j)]; }
  double& at(int64_t i, int64_t j, int64_t k) {
    return data_[static_cast<size_t>((i * dims_[1] + j) * dims_[2] + k)];
  }
  double at(int64_t i, int64_t j, int64_t k) const {
    return data_[static_cast<size_t>((i * dims_[1] + j) * dims_[2] + k)];
  }

  double item() const {
    if (numel() != 1) throw ContractError("item() on tensor with numel != 1");
    return data_[0];
  }

  bool same_dims(const Tensor& o) const { return dims_ == o.dims_; }

  bool all_finite() const {
    for (double x : data_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  std::string dims_str() const {
    std::string s = "(";
    for (size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(dims_[i]);
    }
    return s + ")";
  }

 private:
  static int64_t check_numel(const std::vector<int64_t>& dims) {
    int64_t n = 1;
    for (int64_t d : dims) {
      if (d <= 0) throw DimensionError("tensor dims must be positive");
      n *= d;
    }
    return n;
  }

  std::vector<int64_t> dims_;
  std::vector<double> data_;
};

}  // namespace neurodyn
