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
#include <span>
#include <string>
#include <vector>

#include "mpt/embedding.hpp"
#include "mpt/loss.hpp"
#include "mpt/optimizer.hpp"

namespace mpt {

struct TowerShape {
  std::size_t d_in = 0;
  std::size_t d_hidden = 0;  // 0 = single linear layer
  std::size_t d_out = 0;

  friend bool operator==(const TowerShape&, const TowerShape&) = default;
};

// Projection head: x -> x W1 + b1, or x -> tanh(x W1 + b1) W2 + b2 when a
// hidden layer is configured. Outputs are L2-normalized.
struct Tower {
  MatrixD w1;
  std::vector<double> b1;
  MatrixD w2;  // empty for a linear tower
  std::vector<double> b2;

  bool has_hidden() const noexcept { return !w2.empty(); }
  TowerShape shape() const;

  friend bool operator==(const Tower&, const Tower&) = default;
};

struct TwoTowerModel {
  Tower image;
  Tower text;
  LossParams loss_params;

  // Gaussian weights with std 1/sqrt(fan_in), zero biases.
  static TwoTowerModel init(const TowerShape& shape, std::uint64_t seed,
                            LossParams loss_params = {});
  // Same shapes, every value zero; used as a gradient accumulator.
  static TwoTowerModel zeros_like(const TwoTowerModel& m);

  TowerShape shape() const { return image.shape(); }
  std::size_t parameter_count() const;

  friend bool operator==(const TwoTowerModel& a, const TwoTowerModel& b) {
    return a.image == b.image && a.text == b.text &&
           a.loss_params.log_tau == b.loss_params.log_tau &&
           a.loss_params.beta == b.loss_params.beta;
  }
};

struct NamedBlock {
  const char* name;
  std::span<double> values;
  bool decay;
};

// Every parameter block in a fixed order: image tower, text tower, log_tau,
// beta.
std::vector<NamedBlock> parameter_blocks(TwoTowerModel& m);

// Pairs model blocks with gradient blocks for the optimizer.
std::vector<ParamSlot> optimizer_slots(TwoTowerModel& params,
                                       TwoTowerModel& grads);

struct TowerCache {
  MatrixD input;
  MatrixD hidden;  // tanh activations, hidden towers only
  MatrixD output;  // before normalization
  std::vector<double> norms;
  MatrixD normalized;
};

// Projects and L2-normalizes every row. The cache is filled when given.
MatrixD encode(const Tower& tower, const MatrixD& input,
               TowerCache* cache = nullptr);
MatrixD encode(const Tower& tower, const EmbeddingMatrix& input,
               TowerCache* cache = nullptr);

// Accumulates d loss / d parameters into `grads` given d loss / d normalized
// outputs.
void backward(const Tower& tower, const TowerCache& cache,
              const MatrixD& grad_normalized, Tower& grads);

// FFW1 checkpoint: magic, u32 version, u32 d_in, u32 d_hidden, u32 d_out, then
// f32 payloads for the image tower (w1, b1[, w2, b2]), the text tower in the
// same order, log_tau and beta.
inline constexpr std::uint32_t kCheckpointVersion = 1;
std::vector<std::uint8_t> encode_checkpoint(const TwoTowerModel& m);
TwoTowerModel decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const TwoTowerModel& m, const std::filesystem::path& path);
TwoTowerModel read_checkpoint(const std::filesystem::path& path);

}  // namespace mpt
