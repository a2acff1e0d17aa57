#pragma once

// Dense row-major matrix of doubles.  Rank is implicit: vectors are n x 1 or
// 1 x n, scalars 1 x 1.  This is a plain value container; differentiation
// lives in the tape (tape.hpp), which copies leaf values in and hands
// gradient spans back out.

#include <span>
#include <vector>

#include "sfd/common.hpp"

namespace sfd {

class Tensor {
 public:
  Tensor() = default;

  Tensor(int rows, int cols) : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, 0.0) {
    require(rows > 0 && cols > 0, cat("Tensor: non-positive shape ", rows, "x", cols));
  }

  Tensor(int rows, int cols, std::vector<double> values) : rows_(rows), cols_(cols), data_(std::move(values)) {
    require(rows > 0 && cols > 0, cat("Tensor: non-positive shape ", rows, "x", cols));
    require(data_.size() == static_cast<std::size_t>(rows) * cols,
            cat("Tensor: ", data_.size(), " values for shape ", rows, "x", cols));
  }

  static Tensor scalar(double v) { return Tensor(1, 1, {v}); }

  static Tensor column(std::vector<double> values) {
    const int n = static_cast<int>(values.size());
    return Tensor(n, 1, std::move(values));
  }

  static Tensor row(std::vector<double> values) {
    const int n = static_cast<int>(values.size());
    return Tensor(1, n, std::move(values));
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int size() const { return rows_ * cols_; }

  double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

}  // namespace sfd
