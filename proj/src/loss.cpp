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

#include "mpt/loss.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpt {
namespace {

void require_finite(const MatrixD& m, const char* what) {
  for (double v : m.data()) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument(std::string(what) + ": non-finite score");
    }
  }
}

void require_temperature(double t, const char* what) {
  if (!std::isfinite(t) || t <= 0.0) {
    throw std::invalid_argument(std::string(what) +
                                ": temperature must be finite and > 0");
  }
}

void require_mask(const MatrixD& scores, const AssignmentMatrix& mask,
                  const char* what) {
  if (scores.rows() != mask.entries.rows() ||
      scores.cols() != mask.entries.cols()) {
    throw std::invalid_argument(std::string(what) +
                                ": score and mask shapes differ");
  }
  for (auto v : mask.entries.data()) {
    if (v != 1 && v != -1) {
      throw std::invalid_argument(std::string(what) +
                                  ": mask entries must be -1 or +1");
    }
  }
}

double normalizer(const MatrixD& scores, LossNormalization norm) {
  const double n = norm == LossNormalization::per_text
                       ? static_cast<double>(scores.cols())
                       : static_cast<double>(scores.size());
  return 1.0 / n;
}

double log_sum_exp(std::span<const double> xs) {
  const double hi = *std::ranges::max_element(xs);
  double s = 0.0;
  for (double x : xs) s += std::exp(x - hi);
  return hi + std::log(s);
}

// Mean loss over batches at a given beta; used by the grid search.
struct BetaObjective {
  // Per batch: shifted scores a = s / tau and signs m; loss term is
  // softplus(m * (beta - a)).
  std::vector<std::vector<double>> shifted;
  std::vector<std::vector<std::int8_t>> signs;
  std::vector<double> norms;

  double value(double beta) const {
    double total = 0.0;
    for (std::size_t b = 0; b < shifted.size(); ++b) {
      double s = 0.0;
      const auto& a = shifted[b];
      const auto& m = signs[b];
      for (std::size_t e = 0; e < a.size(); ++e) s += softplus(m[e] * (beta - a[e]));
      total += s * norms[b];
    }
    return total / static_cast<double>(shifted.size());
  }

  double derivative(double beta) const {
    double total = 0.0;
    for (std::size_t b = 0; b < shifted.size(); ++b) {
      double s = 0.0;
      const auto& a = shifted[b];
      const auto& m = signs[b];
      for (std::size_t e = 0; e < a.size(); ++e) {
        s += m[e] * sigmoid(m[e] * (beta - a[e]));
      }
      total += s * norms[b];
    }
    return total / static_cast<double>(shifted.size());
  }
};

}  // namespace

SigmoidLossResult sigmoid_mp_loss(const MatrixD& scores,
                                  const AssignmentMatrix& mask,
                                  const LossParams& params,
                                  LossNormalization norm) {
  require_mask(scores, mask, "sigmoid_mp_loss");
  require_finite(scores, "sigmoid_mp_loss");
  if (!std::isfinite(params.log_tau) || !std::isfinite(params.beta)) {
    throw std::invalid_argument("sigmoid_mp_loss: non-finite tau or beta");
  }
  const double tau = params.tau();
  require_temperature(tau, "sigmoid_mp_loss");
  const double scale = normalizer(scores, norm);

  SigmoidLossResult r;
  r.grad_scores = MatrixD(scores.rows(), scores.cols());
  double loss = 0.0;
  double g_beta = 0.0;
  double g_log_tau = 0.0;
  for (std::size_t e = 0; e < scores.size(); ++e) {
    const double s = scores.data()[e];
    const double m = mask.entries.data()[e];
    const double z = m * (params.beta - s / tau);
    loss += softplus(z);
    const double w = sigmoid(z) * m;  // d softplus(z) / dz * dz/d(beta)
    g_beta += w;
    g_log_tau += w * s / tau;
    r.grad_scores.data()[e] = -scale * w / tau;
  }
  r.loss = scale * loss;
  r.grad_beta = scale * g_beta;
  r.grad_log_tau = scale * g_log_tau;
  return r;
}

ContrastiveLossResult info_nce_loss(const MatrixD& scores, double temperature) {
  if (scores.rows() != scores.cols() || scores.rows() == 0) {
    throw std::invalid_argument(
        "info_nce_loss: score matrix must be square (one positive per row)");
  }
  require_finite(scores, "info_nce_loss");
  require_temperature(temperature, "info_nce_loss");
  const std::size_t n = scores.rows();
  MatrixD logits(n, n);
  for (std::size_t e = 0; e < scores.size(); ++e) {
    logits.data()[e] = scores.data()[e] / temperature;
  }

  ContrastiveLossResult r;
  r.grad_scores = MatrixD(n, n);
  const double scale = 0.5 / (static_cast<double>(n) * temperature);
  double row_loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lse = log_sum_exp(logits.row(i));
    row_loss += lse - logits(i, i);
    for (std::size_t j = 0; j < n; ++j) {
      const double p = std::exp(logits(i, j) - lse);
      r.grad_scores(i, j) += scale * (p - (i == j ? 1.0 : 0.0));
    }
  }
  double col_loss = 0.0;
  std::vector<double> col(n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) col[i] = logits(i, j);
    const double lse = log_sum_exp(col);
    col_loss += lse - logits(j, j);
    for (std::size_t i = 0; i < n; ++i) {
      const double q = std::exp(col[i] - lse);
      r.grad_scores(i, j) += scale * (q - (i == j ? 1.0 : 0.0));
    }
  }
  r.loss = 0.5 * (row_loss + col_loss) / static_cast<double>(n);
  for (std::size_t e = 0; e < scores.size(); ++e) {
    r.grad_log_temperature -= r.grad_scores.data()[e] * scores.data()[e];
  }
  return r;
}

ContrastiveLossResult sup_con_loss(const MatrixD& scores,
                                   const AssignmentMatrix& mask,
                                   double temperature) {
  require_mask(scores, mask, "sup_con_loss");
  require_finite(scores, "sup_con_loss");
  require_temperature(temperature, "sup_con_loss");
  const std::size_t rows = scores.rows();
  const std::size_t cols = scores.cols();

  ContrastiveLossResult r;
  r.grad_scores = MatrixD(rows, cols);
  const double scale = 1.0 / (static_cast<double>(rows) * temperature);
  std::vector<double> logits(cols);
  double loss = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    std::size_t n_pos = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      logits[j] = scores(i, j) / temperature;
      if (mask.entries(i, j) > 0) ++n_pos;
    }
    if (n_pos == 0) {
      throw std::invalid_argument("sup_con_loss: row " + std::to_string(i) +
                                  " has no positive");
    }
    const double lse = log_sum_exp(logits);
    const double inv_pos = 1.0 / static_cast<double>(n_pos);
    double pos_sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const bool pos = mask.entries(i, j) > 0;
      if (pos) pos_sum += logits[j];
      r.grad_scores(i, j) =
          scale * (std::exp(logits[j] - lse) - (pos ? inv_pos : 0.0));
    }
    loss += lse - pos_sum * inv_pos;
  }
  r.loss = loss / static_cast<double>(rows);
  for (std::size_t e = 0; e < scores.size(); ++e) {
    r.grad_log_temperature -= r.grad_scores.data()[e] * scores.data()[e];
  }
  return r;
}

void BetaEstimationConfig::validate() const {
  if (num_batches == 0) {
    throw std::invalid_argument("beta estimation: num_batches must be >= 1");
  }
  if (!(grid_min < grid_max)) {
    throw std::invalid_argument("beta estimation: grid_min must be < grid_max");
  }
  if (grid_steps < 2) {
    throw std::invalid_argument("beta estimation: grid_steps must be >= 2");
  }
}

BetaEstimate estimate_beta(std::span<const ScoredBatch> batches, double tau,
                           const BetaEstimationConfig& config,
                           LossNormalization norm) {
  config.validate();
  if (batches.empty()) {
    throw std::invalid_argument("estimate_beta: no score batches");
  }
  require_temperature(tau, "estimate_beta");

  BetaObjective f;
  for (const auto& b : batches) {
    require_mask(b.scores, b.mask, "estimate_beta");
    require_finite(b.scores, "estimate_beta");
    std::vector<double> a(b.scores.size());
    for (std::size_t e = 0; e < a.size(); ++e) a[e] = b.scores.data()[e] / tau;
    f.shifted.push_back(std::move(a));
    f.signs.emplace_back(b.mask.entries.data().begin(),
                         b.mask.entries.data().end());
    f.norms.push_back(normalizer(b.scores, norm));
  }

  // Grid points are independent; evaluate them row-parallel, reduce in order.
  std::vector<double> values(config.grid_steps);
  parallel_rows(config.grid_steps, [&](std::size_t begin, std::size_t end) {
    for (std::size_t g = begin; g < end; ++g) values[g] = f.value(config.grid_point(g));
  });
  BetaEstimate best;
  best.grid_index = 0;
  best.loss = values[0];
  for (std::size_t g = 1; g < values.size(); ++g) {
    if (values[g] < best.loss) {
      best.loss = values[g];
      best.grid_index = g;
    }
  }
  best.beta = config.grid_point(best.grid_index);
  best.saturated =
      best.grid_index == 0 || best.grid_index + 1 == config.grid_steps;

  if (config.refine) {
    // The objective is convex in beta, so the continuous minimizer lies
    // within one spacing of the grid minimum.
    double lo = std::max(config.grid_min, best.beta - config.spacing());
    double hi = std::min(config.grid_max, best.beta + config.spacing());
    if (f.derivative(lo) < 0.0 && f.derivative(hi) > 0.0) {
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        (f.derivative(mid) < 0.0 ? lo : hi) = mid;
      }
      const double polished = 0.5 * (lo + hi);
      const double value = f.value(polished);
      if (value <= best.loss) {
        best.beta = polished;
        best.loss = value;
      }
    }
  }
  return best;
}

}  // namespace mpt
