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

#include "mpt/embedding.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mpt {

void check_embedding(const EmbeddingMatrix& m, const char* what) {
  if (m.rows() == 0 || m.cols() == 0) {
    throw std::invalid_argument(std::string(what) +
                                ": embedding matrix must have rows >= 1 and "
                                "dim >= 1");
  }
}

NormalizeResult l2_normalize(const EmbeddingMatrix& m) {
  check_embedding(m, "l2_normalize");
  NormalizeResult result{m, {}};
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = result.matrix.row(r);
    double sq = 0.0;
    for (float v : row) sq += static_cast<double>(v) * v;
    if (sq == 0.0) {
      result.zero_rows.push_back(r);
      continue;
    }
    const double norm = std::sqrt(sq);
    for (float& v : row) v = static_cast<float>(v / norm);
  }
  return result;
}

template <typename T>
SimilarityTriple similarity_triple(const Matrix<T>& images,
                                   const Matrix<T>& texts, Accumulation acc) {
  if (images.cols() != texts.cols()) {
    throw std::invalid_argument(
        "similarity_triple: image dim " + std::to_string(images.cols()) +
        " != text dim " + std::to_string(texts.cols()));
  }
  SimilarityTriple t;
  t.s_it = multiply_transposed(images, texts, acc);
  t.s_ii = multiply_transposed(images, images, acc);
  t.s_tt = multiply_transposed(texts, texts, acc);
  t.expanded = false;
  return t;
}

template SimilarityTriple similarity_triple(const MatrixF&, const MatrixF&,
                                            Accumulation);
template SimilarityTriple similarity_triple(const MatrixD&, const MatrixD&,
                                            Accumulation);

}  // namespace mpt
