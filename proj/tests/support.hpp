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

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include <unistd.h>

#include "mpt/embedding.hpp"
#include "mpt/matrix.hpp"
#include "mpt/rng.hpp"

namespace mpt::testing {

template <typename T = double>
Matrix<T> gaussian_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                          double scale = 1.0) {
  Rng rng(seed);
  Matrix<T> m(rows, cols);
  for (auto& v : m.data()) v = static_cast<T>(scale * rng.normal());
  return m;
}

template <typename T = double>
Matrix<T> uniform_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                         double lo, double hi) {
  Rng rng(seed);
  Matrix<T> m(rows, cols);
  for (auto& v : m.data()) v = static_cast<T>(lo + (hi - lo) * rng.uniform());
  return m;
}

// Rows scaled to unit norm in double precision.
inline MatrixD unit_rows(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  MatrixD m = gaussian_matrix(rows, cols, seed);
  for (std::size_t i = 0; i < rows; ++i) {
    double sq = 0.0;
    for (double v : m.row(i)) sq += v * v;
    for (double& v : m.row(i)) v /= std::sqrt(sq);
  }
  return m;
}

inline EmbeddingMatrix unit_rows_f(std::size_t rows, std::size_t cols,
                                   std::uint64_t seed) {
  return l2_normalize(gaussian_matrix<float>(rows, cols, seed)).matrix;
}

// |a - b| <= rel * max(|a|, |b|) + abs_floor
inline bool close(double a, double b, double rel, double abs_floor = 1e-10) {
  return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + abs_floor;
}

// Central difference of f with respect to x, restoring x afterwards.
inline double central_difference(double& x, const std::function<double()>& f,
                                 double h) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * h);
}

// Fresh empty directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("mpt_" + tag + "_" + std::to_string(::getpid()) + "_" +
              std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace mpt::testing
