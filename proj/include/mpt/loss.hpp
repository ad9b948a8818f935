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

#include <cmath>
#include <cstddef>
#include <span>

#include "mpt/matrix.hpp"
#include "mpt/mining.hpp"

namespace mpt {

// Temperature and bias of the sigmoid loss. The temperature is stored as its
// logarithm so gradient steps keep it positive.
struct LossParams {
  double log_tau = std::log(0.07);
  double beta = 0.0;

  double tau() const { return std::exp(log_tau); }
  static LossParams from_tau(double tau, double beta) {
    return {std::log(tau), beta};
  }
};

enum class LossNormalization {
  per_text,   // divide the double sum by n_txt
  per_entry,  // divide by n_img * n_txt
};

// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct SigmoidLossResult {
  double loss = 0.0;
  MatrixD grad_scores;
  double grad_log_tau = 0.0;
  double grad_beta = 0.0;
};

// Multi-positive sigmoid loss over an n_img x n_txt score matrix:
//
//   loss = norm * sum_ij softplus(m_ij * (beta - s_ij / tau))
//
// with m_ij the signed mask. Gradients are exact partial derivatives.
SigmoidLossResult sigmoid_mp_loss(
    const MatrixD& scores, const AssignmentMatrix& mask, const LossParams& params,
    LossNormalization norm = LossNormalization::per_text);

struct ContrastiveLossResult {
  double loss = 0.0;
  MatrixD grad_scores;
  // d loss / d log(temperature); scores enter only as scores / temperature.
  double grad_log_temperature = 0.0;
};

// Symmetric single-positive softmax cross-entropy (image->text and
// text->image), averaged over both directions. Scores must be square.
ContrastiveLossResult info_nce_loss(const MatrixD& scores, double temperature);

// Image->text supervised contrastive loss: for each image, the mean over its
// positive captions of -log softmax, then averaged over images. Every row of
// the mask must contain a positive.
ContrastiveLossResult sup_con_loss(const MatrixD& scores,
                                   const AssignmentMatrix& mask,
                                   double temperature);

struct BetaEstimationConfig {
  std::size_t num_batches = 4;
  double grid_min = -20.0;
  double grid_max = 5.0;
  std::size_t grid_steps = 2501;
  bool refine = true;  // bisection on the derivative around the grid minimum

  void validate() const;
  double spacing() const {
    return (grid_max - grid_min) / static_cast<double>(grid_steps - 1);
  }
  double grid_point(std::size_t i) const {
    return grid_min + static_cast<double>(i) * spacing();
  }
};

struct ScoredBatch {
  MatrixD scores;
  AssignmentMatrix mask;
};

struct BetaEstimate {
  double beta = 0.0;
  double loss = 0.0;       // mean loss at beta
  std::size_t grid_index = 0;
  // The grid minimum sits on an endpoint, so the true minimizer may lie
  // outside the searched range.
  bool saturated = false;
};

// Chooses beta minimizing the mean sigmoid loss over the batches with tau
// held fixed. The mean loss at the result is <= the loss at every grid point.
BetaEstimate estimate_beta(std::span<const ScoredBatch> batches, double tau,
                           const BetaEstimationConfig& config = {},
                           LossNormalization norm = LossNormalization::per_text);

}  // namespace mpt
