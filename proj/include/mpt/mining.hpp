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

// Positive mining: re-labels in-batch negatives as positives when the
// reference embeddings say they match.
//
// For an image i and caption c the pair is positive when
//
//   s_it > p1  or  s_ii > p2  or  (s_tt > p3 and s_it > p1')
//
// using strict comparisons, after s_ii and s_tt have been brought to the
// n_img x n_txt shape of s_it. Ground-truth pairs (c / k == i) are always
// positive.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "mpt/dataset.hpp"
#include "mpt/embedding.hpp"

namespace mpt {

struct MiningThresholds {
  double p1 = 0.27;        // image-text
  double p1_prime = 0.24;  // image-text veto on text-text matches
  double p2 = 0.92;        // image-image
  double p3 = 0.99;        // text-text

  // Throws std::invalid_argument unless every value is in (-1, 1] and
  // p1_prime < p1.
  void validate() const;
};

// Which disjuncts of the mining rule are active.
struct MiningTerms {
  bool it = true;
  bool ii = true;
  bool tt = true;

  static MiningTerms all() { return {true, true, true}; }
  static MiningTerms none() { return {false, false, false}; }
  bool empty() const noexcept { return !it && !ii && !tt; }

  // Accepts "all", "none", or a '+'/',' separated subset of it, ii, tt.
  static MiningTerms parse(std::string_view text);
  std::string to_string() const;

  friend bool operator==(const MiningTerms&, const MiningTerms&) = default;
};

// Signed mask, +1 positive / -1 negative, n_img x n_txt.
struct AssignmentMatrix {
  Matrix<std::int8_t> entries;
  BatchLayout layout;

  bool positive(std::size_t i, std::size_t c) const {
    return entries(i, c) > 0;
  }
  std::size_t positives() const;

  friend bool operator==(const AssignmentMatrix&,
                         const AssignmentMatrix&) = default;
};

// Ground-truth positives only.
AssignmentMatrix block_diagonal_assignment(const BatchLayout& layout);

// out(i, c) = s_ii(i, c / k).
MatrixD expand_image_similarity(const MatrixD& s_ii, const BatchLayout& layout);

// out(i, c) = mean over the k captions c' of image i of s_tt(c', c).
MatrixD expand_text_similarity(const MatrixD& s_tt, const BatchLayout& layout);

SimilarityTriple expand_triple(const SimilarityTriple& triple,
                               const BatchLayout& layout);

AssignmentMatrix build_assignment(const SimilarityTriple& triple,
                                  const MiningThresholds& thresholds,
                                  const BatchLayout& layout,
                                  MiningTerms terms = MiningTerms::all());

// Normalizes both views, builds and expands the similarity triple, then
// applies build_assignment. Zero rows are tolerated (they match nothing).
AssignmentMatrix mine_batch(const EmbeddingMatrix& clean_images,
                            const EmbeddingMatrix& texts,
                            const BatchLayout& layout,
                            const MiningThresholds& thresholds,
                            MiningTerms terms = MiningTerms::all());

// Same pipeline on already-normalized double-precision embeddings (the
// online mode, where the reference is the current model's projection).
AssignmentMatrix mine_normalized(const MatrixD& images, const MatrixD& texts,
                                 const BatchLayout& layout,
                                 const MiningThresholds& thresholds,
                                 MiningTerms terms = MiningTerms::all());

// FFM1 mask file: magic, u64 n_img, u64 n_txt, then ceil(n_img*n_txt/8)
// bytes of row-major bits, least significant bit first, 1 = positive.
std::vector<std::uint8_t> encode_mask(const AssignmentMatrix& mask);
AssignmentMatrix decode_mask(std::span<const std::uint8_t> bytes);
void write_mask(const AssignmentMatrix& mask, const std::filesystem::path& path);
AssignmentMatrix read_mask(const std::filesystem::path& path);

}  // namespace mpt
