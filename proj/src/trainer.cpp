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

#include "mpt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "mpt/rng.hpp"

namespace mpt {
namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kBetaStream = 2;
constexpr std::uint64_t kStepStream = 3;

// a b
MatrixD multiply(const MatrixD& a, const MatrixD& b) {
  MatrixD out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto o = out.row(i);
    auto ar = a.row(i);
    for (std::size_t t = 0; t < ar.size(); ++t) {
      const double v = ar[t];
      if (v == 0.0) continue;
      auto br = b.row(t);
      for (std::size_t j = 0; j < o.size(); ++j) o[j] += v * br[j];
    }
  }
  return out;
}

// a^T b
MatrixD multiply_transposed_left(const MatrixD& a, const MatrixD& b) {
  MatrixD out(a.cols(), b.cols());
  for (std::size_t t = 0; t < a.rows(); ++t) {
    auto ar = a.row(t);
    auto br = b.row(t);
    for (std::size_t i = 0; i < ar.size(); ++i) {
      const double v = ar[i];
      if (v == 0.0) continue;
      auto o = out.row(i);
      for (std::size_t j = 0; j < br.size(); ++j) o[j] += v * br[j];
    }
  }
  return out;
}

std::size_t effective_batch(const EmbeddingDataset& ds, const TrainConfig& c) {
  return std::min(c.batch_images, ds.layout.n_img);
}

}  // namespace

LossKind parse_loss_kind(std::string_view name) {
  if (name == "sigmoid-mp" || name == "sigmoid_mp") return LossKind::sigmoid_mp;
  if (name == "info-nce" || name == "info_nce") return LossKind::info_nce;
  if (name == "sup-con" || name == "sup_con") return LossKind::sup_con;
  throw std::invalid_argument("unknown loss '" + std::string(name) +
                              "' (expected sigmoid-mp, info-nce or sup-con)");
}

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::sigmoid_mp: return "sigmoid-mp";
    case LossKind::info_nce: return "info-nce";
    case LossKind::sup_con: return "sup-con";
  }
  return "?";
}

CaptionMode parse_caption_mode(std::string_view name) {
  if (name == "joint" || name == "joint_k") return CaptionMode::joint_k;
  if (name == "random-one" || name == "random_one_of_k") {
    return CaptionMode::random_one_of_k;
  }
  throw std::invalid_argument("unknown caption mode '" + std::string(name) +
                              "' (expected joint or random-one)");
}

std::string_view to_string(CaptionMode mode) {
  return mode == CaptionMode::joint_k ? "joint" : "random-one";
}

MiningReference parse_mining_reference(std::string_view name) {
  if (name == "frozen" || name == "frozen_external") {
    return MiningReference::frozen_external;
  }
  if (name == "online") return MiningReference::online;
  throw std::invalid_argument("unknown mining reference '" + std::string(name) +
                              "' (expected frozen or online)");
}

std::string_view to_string(MiningReference ref) {
  return ref == MiningReference::frozen_external ? "frozen" : "online";
}

void TrainConfig::validate(const EmbeddingDataset& ds) const {
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (batch_images < 1) {
    throw std::invalid_argument("train: batch_images must be >= 1");
  }
  if (d_out < 1) throw std::invalid_argument("train: d_out must be >= 1");
  if (!(tau_init > 0) || !std::isfinite(tau_init)) {
    throw std::invalid_argument("train: tau_init must be > 0");
  }
  optimizer.validate();
  thresholds.validate();
  beta.validate();
  ds.validate();
  if (loss == LossKind::info_nce) {
    if (caption_mode != CaptionMode::random_one_of_k && ds.layout.k != 1) {
      throw std::invalid_argument(
          "train: info-nce supports one positive per image; use caption mode "
          "random-one or a k = 1 dataset");
    }
    if (!terms.empty()) {
      throw std::invalid_argument(
          "train: info-nce cannot use mined positives; set mining terms to none");
    }
  }
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_images", c.batch_images},
          {"optimizer", to_string(c.optimizer.kind)},
          {"learning_rate", c.optimizer.learning_rate},
          {"weight_decay", c.optimizer.weight_decay},
          {"p1", c.thresholds.p1},
          {"p1_prime", c.thresholds.p1_prime},
          {"p2", c.thresholds.p2},
          {"p3", c.thresholds.p3},
          {"terms", c.terms.to_string()},
          {"captions", to_string(c.caption_mode)},
          {"mining_reference", to_string(c.mining_reference)},
          {"loss", to_string(c.loss)},
          {"normalization", c.normalization == LossNormalization::per_text
                                ? "per-text"
                                : "per-entry"},
          {"seed", c.seed},
          {"d_out", c.d_out},
          {"d_hidden", c.d_hidden},
          {"tau_init", c.tau_init},
          {"beta_batches", c.beta.num_batches},
          {"beta_grid", {c.beta.grid_min, c.beta.grid_max, c.beta.grid_steps}},
          {"beta_refine", c.beta.refine},
          {"cosine_lr", c.cosine_lr}};
}

nlohmann::json to_json(const StepRecord& r) {
  return {{"step", r.step},     {"epoch", r.epoch}, {"loss", r.loss},
          {"tau", r.tau},       {"beta", r.beta},   {"positives", r.positives}};
}

std::string history_jsonl(const std::vector<StepRecord>& history) {
  std::string out;
  for (const auto& r : history) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

void write_history(const std::vector<StepRecord>& history,
                   const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << history_jsonl(history);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

MatrixD batch_scores(const TwoTowerModel& model, const Batch& batch) {
  return multiply_transposed(encode(model.image, batch.images),
                             encode(model.text, batch.texts));
}

AssignmentMatrix batch_mask(const TwoTowerModel& model, const Batch& batch,
                            const TrainConfig& config) {
  if (config.terms.empty() || config.loss == LossKind::info_nce) {
    return block_diagonal_assignment(batch.layout);
  }
  if (config.mining_reference == MiningReference::frozen_external) {
    return mine_batch(batch.images_clean, batch.texts, batch.layout,
                      config.thresholds, config.terms);
  }
  return mine_normalized(encode(model.image, batch.images_clean),
                         encode(model.text, batch.texts), batch.layout,
                         config.thresholds, config.terms);
}

StepObjective step_objective(const TwoTowerModel& model, const Batch& batch,
                             const AssignmentMatrix& mask, LossKind loss,
                             LossNormalization norm) {
  TowerCache image_cache;
  TowerCache text_cache;
  const MatrixD img = encode(model.image, batch.images, &image_cache);
  const MatrixD txt = encode(model.text, batch.texts, &text_cache);
  const MatrixD scores = multiply_transposed(img, txt);

  StepObjective out{0.0, TwoTowerModel::zeros_like(model)};
  MatrixD grad_scores;
  switch (loss) {
    case LossKind::sigmoid_mp: {
      auto r = sigmoid_mp_loss(scores, mask, model.loss_params, norm);
      out.loss = r.loss;
      out.grads.loss_params.log_tau = r.grad_log_tau;
      out.grads.loss_params.beta = r.grad_beta;
      grad_scores = std::move(r.grad_scores);
      break;
    }
    case LossKind::info_nce: {
      auto r = info_nce_loss(scores, model.loss_params.tau());
      out.loss = r.loss;
      out.grads.loss_params.log_tau = r.grad_log_temperature;
      grad_scores = std::move(r.grad_scores);
      break;
    }
    case LossKind::sup_con: {
      auto r = sup_con_loss(scores, mask, model.loss_params.tau());
      out.loss = r.loss;
      out.grads.loss_params.log_tau = r.grad_log_temperature;
      grad_scores = std::move(r.grad_scores);
      break;
    }
  }
  // scores = img txt^T
  backward(model.image, image_cache, multiply(grad_scores, txt), out.grads.image);
  backward(model.text, text_cache, multiply_transposed_left(grad_scores, img),
           out.grads.text);
  return out;
}

BetaEstimate initial_beta(const TwoTowerModel& model, const EmbeddingDataset& ds,
                          const TrainConfig& config) {
  const std::uint64_t stream = mix_seed(config.seed, kBetaStream);
  std::vector<ScoredBatch> batches;
  for (std::size_t j = 0; j < config.beta.num_batches; ++j) {
    const Batch batch = sample_batch(ds, effective_batch(ds, config),
                                     mix_seed(stream, j), config.caption_mode);
    batches.push_back({batch_scores(model, batch), batch_mask(model, batch, config)});
  }
  return estimate_beta(batches, model.loss_params.tau(), config.beta,
                       config.normalization);
}

TwoTowerModel initial_model(const EmbeddingDataset& ds, const TrainConfig& config) {
  const TowerShape shape{ds.dim(), config.d_hidden, config.d_out};
  return TwoTowerModel::init(shape, mix_seed(config.seed, kInitStream),
                             LossParams::from_tau(config.tau_init, 0.0));
}

TrainResult train(const EmbeddingDataset& ds, const TrainConfig& config) {
  config.validate(ds);
  TrainResult result;
  result.model = initial_model(ds, config);
  TwoTowerModel& model = result.model;
  if (config.loss == LossKind::sigmoid_mp) {
    result.beta_init = initial_beta(model, ds, config);
    model.loss_params.beta = result.beta_init->beta;
  }

  const std::size_t batch_images = effective_batch(ds, config);
  const std::size_t steps_per_epoch =
      (ds.layout.n_img + batch_images - 1) / batch_images;
  const std::size_t total = config.epochs * steps_per_epoch;
  const std::uint64_t stream = mix_seed(config.seed, kStepStream);
  Optimizer optimizer(config.optimizer);

  for (std::size_t step = 0; step < total; ++step) {
    const Batch batch = sample_batch(ds, batch_images, mix_seed(stream, step),
                                     config.caption_mode);
    const AssignmentMatrix mask = batch_mask(model, batch, config);
    StepObjective obj =
        step_objective(model, batch, mask, config.loss, config.normalization);

    StepRecord rec{step, step / steps_per_epoch, obj.loss,
                   model.loss_params.tau(), model.loss_params.beta,
                   mask.positives()};
    if (!std::isfinite(obj.loss)) {
      throw TrainingError("non-finite loss at step " + std::to_string(step) +
                          " (tau=" + std::to_string(rec.tau) +
                          ", beta=" + std::to_string(rec.beta) + ")");
    }
    result.history.push_back(rec);

    const double lr_scale =
        config.cosine_lr
            ? 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                                    static_cast<double>(total)))
            : 1.0;
    const auto slots = optimizer_slots(model, obj.grads);
    optimizer.step(slots, lr_scale);

    const double tau = model.loss_params.tau();
    if (!(tau > 0) || !std::isfinite(tau) ||
        !std::isfinite(model.loss_params.beta)) {
      throw TrainingError("invalid loss parameters after step " +
                          std::to_string(step) + ": tau=" + std::to_string(tau) +
                          ", beta=" + std::to_string(model.loss_params.beta));
    }
  }
  return result;
}

}  // namespace mpt
