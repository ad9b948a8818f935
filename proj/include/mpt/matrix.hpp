// Copyright 2026 The MPT Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mpt {

// Dense row-major matrix with value semantics.
template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("matrix data length " +
                                  std::to_string(data_.size()) +
                                  " does not match shape " +
                                  std::to_string(rows_) + "x" +
                                  std::to_string(cols_));
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

inline MatrixD widen(const MatrixF& m) {
  MatrixD out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) out.data()[i] = m.data()[i];
  return out;
}

// Number of worker threads used by row-parallel kernels on the calling
// thread. Defaults to 1; results never depend on this value.
std::size_t workers();
void set_workers(std::size_t n);

// Overrides the worker count for the current thread while in scope.
class WorkerScope {
 public:
  explicit WorkerScope(std::size_t n);
  ~WorkerScope();
  WorkerScope(const WorkerScope&) = delete;
  WorkerScope& operator=(const WorkerScope&) = delete;

 private:
  std::size_t previous_;
  bool had_override_;
};

// Runs fn(begin, end) over contiguous chunks of [0, n). Each index is handled
// by exactly one call, so per-row outputs are identical for any worker count.
void parallel_rows(std::size_t n,
                   const std::function<void(std::size_t, std::size_t)>& fn);

enum class Accumulation { f32, f64 };

// out(i, j) = dot(a.row(i), b.row(j)).
template <typename T>
MatrixD multiply_transposed(const Matrix<T>& a, const Matrix<T>& b,
                            Accumulation acc = Accumulation::f64);

}  // namespace mpt
