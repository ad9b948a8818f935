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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "mpt/dataset.hpp"
#include "mpt/loss.hpp"
#include "mpt/mining.hpp"
#include "mpt/model.hpp"
#include "mpt/optimizer.hpp"

namespace mpt {

enum class LossKind { sigmoid_mp, info_nce, sup_con };
enum class MiningReference { frozen_external, online };

LossKind parse_loss_kind(std::string_view name);
std::string_view to_string(LossKind kind);
CaptionMode parse_caption_mode(std::string_view name);
std::string_view to_string(CaptionMode mode);
MiningReference parse_mining_reference(std::string_view name);
std::string_view to_string(MiningReference ref);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_images = 128;
  OptimizerConfig optimizer;
  MiningThresholds thresholds;
  MiningTerms terms = MiningTerms::all();
  CaptionMode caption_mode = CaptionMode::joint_k;
  MiningReference mining_reference = MiningReference::frozen_external;
  LossKind loss = LossKind::sigmoid_mp;
  LossNormalization normalization = LossNormalization::per_text;
  std::uint64_t seed = 0;

  std::size_t d_out = 32;
  std::size_t d_hidden = 0;
  double tau_init = 0.07;
  BetaEstimationConfig beta;
  bool cosine_lr = false;

  // Throws std::invalid_argument on inconsistent settings.
  void validate(const EmbeddingDataset& ds) const;
};

nlohmann::json to_json(const TrainConfig& c);

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double tau = 0.0;
  double beta = 0.0;
  std::size_t positives = 0;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

nlohmann::json to_json(const StepRecord& r);
// One JSON object per line.
std::string history_jsonl(const std::vector<StepRecord>& history);
void write_history(const std::vector<StepRecord>& history,
                   const std::filesystem::path& path);

struct TrainResult {
  TwoTowerModel model;
  std::vector<StepRecord> history;
  std::optional<BetaEstimate> beta_init;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

TrainResult train(const EmbeddingDataset& ds, const TrainConfig& config);

// The model training starts from (before the beta search).
TwoTowerModel initial_model(const EmbeddingDataset& ds, const TrainConfig& config);

// Positive mask for a batch: block-diagonal when mining is disabled or the
// loss is single-positive, otherwise mined on the configured reference view.
AssignmentMatrix batch_mask(const TwoTowerModel& model, const Batch& batch,
                            const TrainConfig& config);

struct StepObjective {
  double loss = 0.0;
  TwoTowerModel grads;
};

// Loss of one batch and its exact gradient with respect to every model
// parameter. The mask is treated as constant data.
StepObjective step_objective(const TwoTowerModel& model, const Batch& batch,
                             const AssignmentMatrix& mask, LossKind loss,
                             LossNormalization norm = LossNormalization::per_text);

// Cosine similarities between the model's image and text projections.
MatrixD batch_scores(const TwoTowerModel& model, const Batch& batch);

// The initial beta search: samples num_batches batches, scores them with the
// given (freshly initialized) model and minimizes the mean loss over beta.
BetaEstimate initial_beta(const TwoTowerModel& model, const EmbeddingDataset& ds,
                          const TrainConfig& config);

}  // namespace mpt
