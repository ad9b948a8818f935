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
#include <span>
#include <string_view>
#include <vector>

namespace mpt {

enum class OptimizerKind { sgd_momentum, adaptive_moments };

OptimizerKind parse_optimizer_kind(std::string_view name);
std::string_view to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adaptive_moments;
  double learning_rate = 1e-3;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double momentum = 0.9;  // sgd_momentum only

  void validate() const;
};

// One parameter block and its gradient. Blocks with decay = false (the loss
// temperature and bias) are excluded from weight decay.
struct ParamSlot {
  std::span<double> value;
  std::span<const double> grad;
  bool decay = true;
};

// Adaptive-moments (AdamW) or momentum SGD, both with decoupled weight decay:
// value -= lr * weight_decay * value before the gradient step.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);

  // Slot count and sizes must stay the same across calls.
  void step(std::span<const ParamSlot> slots, double lr_scale = 1.0);

  std::size_t steps() const noexcept { return t_; }
  const OptimizerConfig& config() const noexcept { return config_; }

 private:
  OptimizerConfig config_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::size_t t_ = 0;
};

}  // namespace mpt
