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

#include "mpt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mpt {
namespace {

void require_pair(const MatrixD& images, const MatrixD& texts,
                  const BatchLayout& layout) {
  layout.validate();
  if (images.rows() != layout.n_img || texts.rows() != layout.n_txt()) {
    throw std::invalid_argument(
        "evaluation: expected " + std::to_string(layout.n_img) + " images and " +
        std::to_string(layout.n_txt()) + " captions, got " +
        std::to_string(images.rows()) + " and " + std::to_string(texts.rows()));
  }
  if (images.cols() != texts.cols()) {
    throw std::invalid_argument("evaluation: image and caption dims differ");
  }
}

void require_ks(std::span<const std::size_t> ks, std::size_t corpus) {
  if (ks.empty()) throw std::invalid_argument("evaluation: no K values given");
  for (std::size_t k : ks) {
    if (k == 0 || k > corpus) {
      throw std::invalid_argument("evaluation: K = " + std::to_string(k) +
                                  " outside [1, " + std::to_string(corpus) + "]");
    }
  }
}

// 1-based position of `target` in `scores` sorted descending, ties by index.
std::size_t rank_of(std::span<const double> scores, std::size_t target) {
  const double s = scores[target];
  std::size_t ahead = 0;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    if (scores[c] > s || (scores[c] == s && c < target)) ++ahead;
  }
  return ahead + 1;
}

RetrievalReport tally(RetrievalDirection direction,
                      const std::vector<std::size_t>& best_ranks,
                      std::span<const std::size_t> ks) {
  RetrievalReport r;
  r.direction = direction;
  r.n_queries = best_ranks.size();
  for (std::size_t k : ks) {
    const auto hits = std::count_if(best_ranks.begin(), best_ranks.end(),
                                    [k](std::size_t rank) { return rank <= k; });
    r.recall_at[k] = r.n_queries == 0
                         ? 0.0
                         : static_cast<double>(hits) / static_cast<double>(r.n_queries);
  }
  return r;
}

}  // namespace

std::string_view to_string(RetrievalDirection d) {
  return d == RetrievalDirection::text_retrieval ? "text_retrieval"
                                                 : "image_retrieval";
}

nlohmann::json to_json(const RetrievalReport& r) {
  nlohmann::json recall = nlohmann::json::object();
  for (const auto& [k, v] : r.recall_at) recall["R@" + std::to_string(k)] = v;
  return {{"direction", to_string(r.direction)},
          {"n_queries", r.n_queries},
          {"recall", recall}};
}

RetrievalReport text_retrieval(const MatrixD& images, const MatrixD& texts,
                               const BatchLayout& layout,
                               std::span<const std::size_t> ks) {
  require_pair(images, texts, layout);
  require_ks(ks, layout.n_txt());
  const MatrixD scores = multiply_transposed(images, texts);
  std::vector<std::size_t> best(layout.n_img);
  parallel_rows(layout.n_img, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      std::size_t b = layout.n_txt();
      for (std::size_t j = 0; j < layout.k; ++j) {
        b = std::min(b, rank_of(scores.row(i), i * layout.k + j));
      }
      best[i] = b;
    }
  });
  return tally(RetrievalDirection::text_retrieval, best, ks);
}

RetrievalReport image_retrieval(const MatrixD& images, const MatrixD& texts,
                                const BatchLayout& layout,
                                std::span<const std::size_t> ks) {
  require_pair(images, texts, layout);
  require_ks(ks, layout.n_img);
  const MatrixD scores = multiply_transposed(texts, images);
  std::vector<std::size_t> best(layout.n_txt());
  parallel_rows(layout.n_txt(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t c = begin; c < end; ++c) {
      best[c] = rank_of(scores.row(c), layout.image_of(c));
    }
  });
  return tally(RetrievalDirection::image_retrieval, best, ks);
}

RetrievalPair recall_at_k(const MatrixD& images, const MatrixD& texts,
                          const BatchLayout& layout,
                          std::span<const std::size_t> ks) {
  require_ks(ks, layout.n_img);
  return {text_retrieval(images, texts, layout, ks),
          image_retrieval(images, texts, layout, ks)};
}

RetrievalPair recall_at_k(const EmbeddingMatrix& images,
                          const EmbeddingMatrix& texts, const BatchLayout& layout,
                          std::span<const std::size_t> ks) {
  return recall_at_k(widen(images), widen(texts), layout, ks);
}

MatrixD class_text_prototypes(const MatrixD& texts, const BatchLayout& layout,
                              std::span<const std::uint32_t> labels,
                              std::size_t n_classes) {
  if (texts.rows() != layout.n_txt() || labels.size() != layout.n_img) {
    throw std::invalid_argument("prototypes: labels or captions do not match layout");
  }
  MatrixD protos(n_classes, texts.cols());
  for (std::size_t c = 0; c < texts.rows(); ++c) {
    const std::uint32_t label = labels[layout.image_of(c)];
    if (label >= n_classes) {
      throw std::invalid_argument("prototypes: label " + std::to_string(label) +
                                  " >= " + std::to_string(n_classes) + " classes");
    }
    auto dst = protos.row(label);
    auto src = texts.row(c);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
  }
  for (std::size_t p = 0; p < n_classes; ++p) {
    auto row = protos.row(p);
    double sq = 0.0;
    for (double v : row) sq += v * v;
    if (sq == 0.0) continue;
    const double norm = std::sqrt(sq);
    for (double& v : row) v /= norm;
  }
  return protos;
}

double prototype_accuracy(const MatrixD& images, const MatrixD& prototypes,
                          std::span<const std::uint32_t> labels) {
  if (labels.size() != images.rows()) {
    throw std::invalid_argument("prototype_accuracy: one label per image required");
  }
  if (images.rows() == 0) {
    throw std::invalid_argument("prototype_accuracy: no images");
  }
  if (prototypes.rows() == 0 || prototypes.cols() != images.cols()) {
    throw std::invalid_argument("prototype_accuracy: prototype shape mismatch");
  }
  for (std::uint32_t label : labels) {
    if (label >= prototypes.rows()) {
      throw std::invalid_argument("prototype_accuracy: label " +
                                  std::to_string(label) + " out of range for " +
                                  std::to_string(prototypes.rows()) + " classes");
    }
  }
  const MatrixD scores = multiply_transposed(images, prototypes);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < images.rows(); ++i) {
    auto row = scores.row(i);
    // max_element keeps the first maximum.
    const auto best = static_cast<std::size_t>(
        std::max_element(row.begin(), row.end()) - row.begin());
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(images.rows());
}

double prototype_accuracy(const EmbeddingMatrix& images,
                          const EmbeddingMatrix& prototypes,
                          std::span<const std::uint32_t> labels) {
  return prototype_accuracy(widen(images), widen(prototypes), labels);
}

RankingAudit ranking_audit(const MatrixD& images, const MatrixD& texts,
                           const BatchLayout& layout) {
  require_pair(images, texts, layout);
  const MatrixD scores = multiply_transposed(images, texts);
  RankingAudit audit;
  audit.layout = layout;
  audit.ranks.resize(layout.n_txt());
  parallel_rows(layout.n_img, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t j = 0; j < layout.k; ++j) {
        const std::size_t c = i * layout.k + j;
        audit.ranks[c] = rank_of(scores.row(i), c);
      }
    }
  });
  audit.histogram.assign(layout.n_txt(), 0);
  for (std::size_t r : audit.ranks) ++audit.histogram[r - 1];
  return audit;
}

RankingAudit ranking_audit(const EmbeddingMatrix& images,
                           const EmbeddingMatrix& texts, const BatchLayout& layout) {
  return ranking_audit(widen(images), widen(texts), layout);
}

std::string audit_csv(const RankingAudit& audit) {
  std::ostringstream out;
  out << "image,caption,rank\n";
  for (std::size_t c = 0; c < audit.ranks.size(); ++c) {
    out << audit.layout.image_of(c) << ',' << c << ',' << audit.ranks[c] << '\n';
  }
  return out.str();
}

std::string histogram_csv(const RankingAudit& audit) {
  std::ostringstream out;
  out << "rank,count\n";
  for (std::size_t r = 0; r < audit.histogram.size(); ++r) {
    if (audit.histogram[r] != 0) out << r + 1 << ',' << audit.histogram[r] << '\n';
  }
  return out.str();
}

nlohmann::json to_json(const EvaluationReport& r) {
  nlohmann::json j = {{"text_retrieval", to_json(r.retrieval.text)},
                      {"image_retrieval", to_json(r.retrieval.image)}};
  if (r.prototype_accuracy) {
    j["prototype_accuracy"] = *r.prototype_accuracy;
    j["n_classes"] = r.n_classes;
  }
  return j;
}

EvaluationReport evaluate_model(const TwoTowerModel& model,
                                const EmbeddingDataset& eval,
                                std::span<const std::size_t> ks) {
  eval.validate();
  const MatrixD images = encode(model.image, eval.reference_images());
  const MatrixD texts = encode(model.text, eval.texts);
  EvaluationReport report;
  report.retrieval = recall_at_k(images, texts, eval.layout, ks);
  if (eval.labels) {
    const auto& labels = *eval.labels;
    report.n_classes =
        labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    const MatrixD protos =
        class_text_prototypes(texts, eval.layout, labels, report.n_classes);
    report.prototype_accuracy = prototype_accuracy(images, protos, labels);
  }
  return report;
}

}  // namespace mpt
