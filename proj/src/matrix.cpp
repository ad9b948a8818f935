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

#include <algorithm>
#include <atomic>
#include <functional>
#include <thread>

#include "mpt/matrix.hpp"

namespace mpt {
namespace {

std::atomic<std::size_t> g_workers{1};
thread_local std::size_t t_workers = 0;  // 0 = no override

}  // namespace

std::size_t workers() {
  return t_workers != 0 ? t_workers : g_workers.load();
}

void set_workers(std::size_t n) { g_workers.store(std::max<std::size_t>(n, 1)); }

WorkerScope::WorkerScope(std::size_t n)
    : previous_(t_workers), had_override_(t_workers != 0) {
  t_workers = std::max<std::size_t>(n, 1);
}

WorkerScope::~WorkerScope() { t_workers = had_override_ ? previous_ : 0; }

void parallel_rows(std::size_t n,
                   const std::function<void(std::size_t, std::size_t)>& fn) {
  const std::size_t w = std::min(workers(), n);
  if (w <= 1) {
    if (n > 0) fn(0, n);
    return;
  }
  std::vector<std::jthread> threads;
  threads.reserve(w - 1);
  const std::size_t chunk = (n + w - 1) / w;
  for (std::size_t t = 1; t < w; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&fn, begin, end] {
      WorkerScope serial(1);
      fn(begin, end);
    });
  }
  fn(0, std::min(n, chunk));
}

template <typename T>
MatrixD multiply_transposed(const Matrix<T>& a, const Matrix<T>& b,
                            Accumulation acc) {
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("dimension mismatch: " +
                                std::to_string(a.cols()) + " vs " +
                                std::to_string(b.cols()));
  }
  MatrixD out(a.rows(), b.rows());
  const std::size_t d = a.cols();
  parallel_rows(a.rows(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      auto ar = a.row(i);
      for (std::size_t j = 0; j < b.rows(); ++j) {
        auto br = b.row(j);
        if (acc == Accumulation::f64) {
          double s = 0.0;
          for (std::size_t t = 0; t < d; ++t) {
            s += static_cast<double>(ar[t]) * static_cast<double>(br[t]);
          }
          out(i, j) = s;
        } else {
          float s = 0.0f;
          for (std::size_t t = 0; t < d; ++t) {
            s += static_cast<float>(ar[t]) * static_cast<float>(br[t]);
          }
          out(i, j) = s;
        }
      }
    }
  });
  return out;
}

template MatrixD multiply_transposed(const MatrixF&, const MatrixF&,
                                     Accumulation);
template MatrixD multiply_transposed(const MatrixD&, const MatrixD&,
                                     Accumulation);

}  // namespace mpt
