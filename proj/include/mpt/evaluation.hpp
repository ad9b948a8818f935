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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "mpt/dataset.hpp"
#include "mpt/matrix.hpp"
#include "mpt/model.hpp"

namespace mpt {

enum class RetrievalDirection { text_retrieval, image_retrieval };

std::string_view to_string(RetrievalDirection d);

struct RetrievalReport {
  RetrievalDirection direction = RetrievalDirection::text_retrieval;
  std::map<std::size_t, double> recall_at;  // K -> fraction of queries
  std::size_t n_queries = 0;
};

nlohmann::json to_json(const RetrievalReport& r);

// Image queries against all captions. A query hits at K when any of its k
// captions ranks within the top K. Ties go to the lower index.
RetrievalReport text_retrieval(const MatrixD& images, const MatrixD& texts,
                               const BatchLayout& layout,
                               std::span<const std::size_t> ks);

// Caption queries against all images. A query hits at K when its own image
// ranks within the top K.
RetrievalReport image_retrieval(const MatrixD& images, const MatrixD& texts,
                                const BatchLayout& layout,
                                std::span<const std::size_t> ks);

struct RetrievalPair {
  RetrievalReport text;
  RetrievalReport image;
};

// Both directions. Every K must lie in [1, n_img].
RetrievalPair recall_at_k(const MatrixD& images, const MatrixD& texts,
                          const BatchLayout& layout,
                          std::span<const std::size_t> ks);
RetrievalPair recall_at_k(const EmbeddingMatrix& images,
                          const EmbeddingMatrix& texts, const BatchLayout& layout,
                          std::span<const std::size_t> ks);

// Normalized mean caption embedding per class, where a caption takes the
// label of its image. A class without captions gets a zero row.
MatrixD class_text_prototypes(const MatrixD& texts, const BatchLayout& layout,
                              std::span<const std::uint32_t> labels,
                              std::size_t n_classes);

// Fraction of images whose most similar prototype is their labelled class.
// Ties go to the lower class index.
double prototype_accuracy(const MatrixD& images, const MatrixD& prototypes,
                          std::span<const std::uint32_t> labels);
double prototype_accuracy(const EmbeddingMatrix& images,
                          const EmbeddingMatrix& prototypes,
                          std::span<const std::uint32_t> labels);

struct RankingAudit {
  BatchLayout layout;
  // ranks[i * k + j]: 1-based rank of caption j of image i among all captions
  // when queried with image i.
  std::vector<std::size_t> ranks;
  // histogram[r - 1]: number of ground-truth captions at rank r.
  std::vector<std::size_t> histogram;

  std::size_t rank(std::size_t image, std::size_t j) const {
    return ranks[image * layout.k + j];
  }
};

RankingAudit ranking_audit(const MatrixD& images, const MatrixD& texts,
                           const BatchLayout& layout);
RankingAudit ranking_audit(const EmbeddingMatrix& images,
                           const EmbeddingMatrix& texts, const BatchLayout& layout);

// CSV with columns image,caption,rank.
std::string audit_csv(const RankingAudit& audit);
// CSV with columns rank,count over non-empty bins.
std::string histogram_csv(const RankingAudit& audit);

struct EvaluationReport {
  RetrievalPair retrieval;
  std::optional<double> prototype_accuracy;
  std::size_t n_classes = 0;
};

nlohmann::json to_json(const EvaluationReport& r);

// Projects the evaluation set's reference images and captions with the model
// and scores retrieval, plus prototype accuracy when labels are present.
EvaluationReport evaluate_model(const TwoTowerModel& model,
                                const EmbeddingDataset& eval,
                                std::span<const std::size_t> ks);

}  // namespace mpt
