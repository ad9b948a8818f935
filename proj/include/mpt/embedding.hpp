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
#include <vector>

#include "mpt/matrix.hpp"

namespace mpt {

// Row-major f32 feature vectors, one sample per row.
using EmbeddingMatrix = MatrixF;

// Throws std::invalid_argument unless rows >= 1 and dim >= 1.
void check_embedding(const EmbeddingMatrix& m, const char* what);

struct NormalizeResult {
  EmbeddingMatrix matrix;
  // Rows that were exactly zero and were left untouched.
  std::vector<std::size_t> zero_rows;
};

// Divides every nonzero row by its Euclidean norm. Zero rows are passed
// through and reported, not rejected.
NormalizeResult l2_normalize(const EmbeddingMatrix& m);

// Image-text, image-image and text-text cosine similarities of a batch.
// Pre-expansion s_ii is n_img x n_img and s_tt is n_txt x n_txt; after
// expansion (see mining.hpp) all three are n_img x n_txt.
struct SimilarityTriple {
  MatrixD s_it;
  MatrixD s_ii;
  MatrixD s_tt;
  bool expanded = false;
};

// Inputs are expected to be L2-normalized already.
template <typename T>
SimilarityTriple similarity_triple(const Matrix<T>& images,
                                   const Matrix<T>& texts,
                                   Accumulation acc = Accumulation::f64);

}  // namespace mpt
