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
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "mpt/dataset.hpp"
#include "mpt/trainer.hpp"

namespace mpt {

enum class AblationAxis {
  mask_terms,     // values: all, none, it, it+ii, ...
  num_captions,   // values: caption counts <= the dataset's k
  caption_mode,   // values: joint, random-one
  thresholds_p1,  // values: p1 thresholds
  loss_kind,      // values: sigmoid-mp, sup-con, info-nce
};

AblationAxis parse_ablation_axis(std::string_view name);
std::string_view to_string(AblationAxis axis);

// One independent repetition: its own training data, held-out data and
// training seed.
struct AblationReplicate {
  EmbeddingDataset train;
  EmbeddingDataset eval;  // must carry labels
  std::uint64_t seed = 0;
};

struct AblationRow {
  std::string value;
  std::uint64_t seed = 0;
  double prototype_accuracy = 0.0;
  double text_r1 = 0.0;
  double image_r1 = 0.0;
  double final_loss = 0.0;
};

struct AblationSummary {
  std::string value;
  std::size_t runs = 0;
  double prototype_accuracy = 0.0;
  double text_r1 = 0.0;
  double image_r1 = 0.0;
};

struct AblationTable {
  AblationAxis axis = AblationAxis::mask_terms;
  std::vector<AblationRow> rows;

  // Means over replicates, in the order values were given.
  std::vector<AblationSummary> summaries() const;
  // Throws std::out_of_range for a value that was not run.
  AblationSummary summary(std::string_view value) const;
};

// The configuration and training set used for one axis value. Selecting
// info-nce also switches to one random caption per image without mining.
struct AblationSetting {
  TrainConfig config;
  EmbeddingDataset train;
};
AblationSetting configure_ablation(const EmbeddingDataset& train,
                                   const TrainConfig& base, AblationAxis axis,
                                   std::string_view value);

// Trains one model per (value, replicate) with everything else held fixed and
// scores it on the replicate's held-out set.
AblationTable run_ablation(std::span<const AblationReplicate> replicates,
                           const TrainConfig& base, AblationAxis axis,
                           std::span<const std::string> values);

std::string ablation_csv(const AblationTable& table);
std::string ablation_jsonl(const AblationTable& table);

}  // namespace mpt
