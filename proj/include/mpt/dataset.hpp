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
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "mpt/embedding.hpp"

namespace mpt {

// k captions per image, grouped contiguously: caption c belongs to image c / k.
struct BatchLayout {
  std::size_t n_img = 0;
  std::size_t k = 1;

  std::size_t n_txt() const noexcept { return n_img * k; }
  std::size_t image_of(std::size_t caption) const noexcept {
    return caption / k;
  }
  bool is_ground_truth(std::size_t image, std::size_t caption) const noexcept {
    return caption / k == image;
  }
  void validate() const;

  friend bool operator==(const BatchLayout&, const BatchLayout&) = default;
};

struct PlantedPair {
  std::uint64_t image = 0;
  std::uint64_t caption = 0;
  friend bool operator==(const PlantedPair&, const PlantedPair&) = default;
  friend auto operator<=>(const PlantedPair&, const PlantedPair&) = default;
};

struct EmbeddingDataset {
  EmbeddingMatrix images;  // training (augmented) view
  std::optional<EmbeddingMatrix> images_clean;  // no-augmentation view
  EmbeddingMatrix texts;
  BatchLayout layout;
  std::optional<std::vector<std::uint32_t>> labels;
  std::optional<std::vector<PlantedPair>> planted;

  // The view used for mining: clean if present, else the training view.
  const EmbeddingMatrix& reference_images() const {
    return images_clean ? *images_clean : images;
  }
  std::size_t dim() const noexcept { return images.cols(); }

  // Throws FormatError naming the offending field.
  void validate() const;

  friend bool operator==(const EmbeddingDataset&,
                         const EmbeddingDataset&) = default;
};

// Malformed dataset, mask or checkpoint content. field() names the part of
// the file that failed validation.
class FormatError : public std::runtime_error {
 public:
  FormatError(std::string field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

struct WriteOptions {
  bool overwrite = false;
  // Extra informative entries merged into the JSON manifest.
  nlohmann::json manifest_extra = nlohmann::json::object();
};

// Writes <stem>.ffe (authoritative binary) and <stem>.json (manifest).
// A trailing ".ffe" on the stem is accepted and stripped.
void write_dataset(const EmbeddingDataset& ds, const std::filesystem::path& stem,
                   const WriteOptions& options = {});
EmbeddingDataset read_dataset(const std::filesystem::path& stem);

// Binary encoding of the .ffe payload; exposed for byte-level tests.
std::vector<std::uint8_t> encode_dataset(const EmbeddingDataset& ds);
EmbeddingDataset decode_dataset(std::span<const std::uint8_t> bytes);

nlohmann::json dataset_manifest(const EmbeddingDataset& ds);

enum class CaptionMode { joint_k, random_one_of_k };

struct Batch {
  EmbeddingMatrix images;
  EmbeddingMatrix images_clean;
  EmbeddingMatrix texts;
  BatchLayout layout;
  std::vector<std::size_t> image_indices;    // into the dataset
  std::vector<std::size_t> caption_indices;  // into the dataset
};

// Picks batch_images distinct images uniformly at random (seeded) with either
// all k of their captions or one uniformly chosen caption each.
Batch sample_batch(const EmbeddingDataset& ds, std::size_t batch_images,
                   std::uint64_t seed,
                   CaptionMode mode = CaptionMode::joint_k);

// Keeps the first `k` captions of every image.
EmbeddingDataset restrict_captions(const EmbeddingDataset& ds, std::size_t k);

struct SynthConfig {
  std::size_t n_classes = 8;
  std::size_t images_per_class = 16;
  std::size_t k = 5;
  std::size_t d_raw = 64;
  double image_noise_std = 0.1;      // per-coordinate spread around prototype
  double caption_noise_std = 0.1;    // per-coordinate caption perturbation
  double image_aug_noise_std = 0.05; // training-view augmentation noise
  double duplicate_fraction = 0.0;
  double mislabel_fraction = 0.0;
  // Mislabeled captions are recorded as planted positives for foreign images
  // whose clean cosine to them exceeds this margin.
  double cross_margin = 0.3;
  // Radius of the perturbation separating a duplicate from its source.
  // Cosine to the source is at least sqrt(1 - r^2).
  double duplicate_radius = 0.15;

  void validate() const;
};

nlohmann::json to_json(const SynthConfig& c);

// Ground truth recorded by the generator.
struct SynthTrace {
  struct Duplicate {
    std::size_t image;
    std::size_t source;
    double clean_cosine;
  };
  std::vector<Duplicate> duplicates;
  // Caption index -> class prototype it was drawn from.
  std::vector<std::uint32_t> caption_class;
  std::vector<std::size_t> mislabeled_captions;
  // sqrt(1 - duplicate_radius^2); every duplicate's clean cosine exceeds it.
  double duplicate_margin = 0.0;
  double cross_margin = 0.0;
  // Largest clean cosines over non-planted pairs (i, c) where image i's class
  // differs from both the class of c's owner image and the class c was drawn
  // from.
  double cross_class_max_it = -1.0;
  double cross_class_max_ii = -1.0;
};

struct SynthResult {
  EmbeddingDataset dataset;
  SynthTrace trace;
};

SynthResult generate_synthetic_traced(const SynthConfig& config,
                                      std::uint64_t seed);
EmbeddingDataset generate_synthetic(const SynthConfig& config,
                                    std::uint64_t seed);

// Fresh images and captions around the same class prototypes as
// generate_synthetic(config, seed), with no duplicates or mislabels. Used as a
// held-out evaluation split.
EmbeddingDataset generate_holdout(const SynthConfig& config, std::uint64_t seed,
                                  std::size_t images_per_class);

}  // namespace mpt
