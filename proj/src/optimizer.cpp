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

#include "mpt/optimizer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mpt {

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "adamw" || name == "adaptive_moments") {
    return OptimizerKind::adaptive_moments;
  }
  if (name == "sgd" || name == "sgd_momentum") return OptimizerKind::sgd_momentum;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) +
                              "' (expected adamw or sgd)");
}

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::adaptive_moments ? "adamw" : "sgd";
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0)) {
    throw std::invalid_argument("optimizer: learning_rate must be > 0");
  }
  if (!(weight_decay >= 0)) {
    throw std::invalid_argument("optimizer: weight_decay must be >= 0");
  }
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) {
    throw std::invalid_argument("optimizer: moment decay rates must be in [0, 1)");
  }
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) {
  config_.validate();
}

void Optimizer::step(std::span<const ParamSlot> slots, double lr_scale) {
  if (t_ == 0) {
    first_.clear();
    second_.clear();
    for (const auto& s : slots) {
      first_.emplace_back(s.value.size(), 0.0);
      if (config_.kind == OptimizerKind::adaptive_moments) {
        second_.emplace_back(s.value.size(), 0.0);
      }
    }
  }
  if (slots.size() != first_.size()) {
    throw std::invalid_argument("optimizer: parameter block count changed from " +
                                std::to_string(first_.size()) + " to " +
                                std::to_string(slots.size()));
  }
  for (std::size_t b = 0; b < slots.size(); ++b) {
    if (slots[b].value.size() != slots[b].grad.size() ||
        slots[b].value.size() != first_[b].size()) {
      throw std::invalid_argument("optimizer: shape mismatch in block " +
                                  std::to_string(b));
    }
  }

  ++t_;
  const double lr = config_.learning_rate * lr_scale;
  const double wd = config_.weight_decay;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t b = 0; b < slots.size(); ++b) {
    auto value = slots[b].value;
    auto grad = slots[b].grad;
    auto& m = first_[b];
    for (std::size_t i = 0; i < value.size(); ++i) {
      if (slots[b].decay) value[i] -= lr * wd * value[i];
      const double g = grad[i];
      if (config_.kind == OptimizerKind::adaptive_moments) {
        auto& v = second_[b];
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
        value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
      } else {
        m[i] = config_.momentum * m[i] + g;
        value[i] -= lr * m[i];
      }
    }
  }
}

}  // namespace mpt
