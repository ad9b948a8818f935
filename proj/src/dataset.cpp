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

#include "mpt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "binary_io.hpp"
#include "mpt/rng.hpp"

namespace mpt {
namespace fs = std::filesystem;

void BatchLayout::validate() const {
  if (n_img == 0) throw FormatError("n_img", "must be >= 1");
  if (k == 0) throw FormatError("k", "must be >= 1");
}

void EmbeddingDataset::validate() const {
  layout.validate();
  if (images.rows() != layout.n_img) {
    throw FormatError("image_embeddings",
                      "rows " + std::to_string(images.rows()) +
                          " != n_img " + std::to_string(layout.n_img));
  }
  if (images.cols() == 0) throw FormatError("d_raw", "must be >= 1");
  if (texts.rows() != layout.n_txt()) {
    throw FormatError("text_embeddings",
                      "rows " + std::to_string(texts.rows()) +
                          " != k * n_img = " + std::to_string(layout.n_txt()));
  }
  if (texts.cols() != images.cols()) {
    throw FormatError("text_embeddings", "dim differs from image dim");
  }
  if (images_clean && !images_clean->same_shape(images)) {
    throw FormatError("clean_view", "shape differs from image_embeddings");
  }
  if (labels && labels->size() != layout.n_img) {
    throw FormatError("labels", "count differs from n_img");
  }
  if (planted) {
    for (const auto& p : *planted) {
      if (p.image >= layout.n_img || p.caption >= layout.n_txt()) {
        throw FormatError("planted", "index out of range");
      }
      if (layout.is_ground_truth(p.image, p.caption)) {
        throw FormatError("planted", "pair (" + std::to_string(p.image) + ", " +
                                         std::to_string(p.caption) +
                                         ") is a ground-truth pair");
      }
    }
  }
}

namespace {

void put_matrix(detail::ByteWriter& w, const EmbeddingMatrix& m) {
  for (float v : m.data()) w.f32(v);
}

EmbeddingMatrix get_matrix(detail::ByteReader& r, std::size_t rows,
                           std::size_t cols, const char* field) {
  r.need(rows * cols * 4, field);
  EmbeddingMatrix m(rows, cols);
  for (float& v : m.data()) v = r.f32(field);
  return m;
}

std::uint8_t get_flag(detail::ByteReader& r, const char* field) {
  const std::uint8_t v = r.u8(field);
  if (v > 1) throw FormatError(field, "flag must be 0 or 1");
  return v;
}

fs::path strip_ffe(const fs::path& stem) {
  return stem.extension() == ".ffe" ? fs::path(stem).replace_extension()
                                    : stem;
}

fs::path with_suffix(const fs::path& stem, const char* suffix) {
  return fs::path(stem.string() + suffix);
}

}  // namespace

std::vector<std::uint8_t> encode_dataset(const EmbeddingDataset& ds) {
  ds.validate();
  if (ds.layout.k > 0xFFFFFFFFu || ds.dim() > 0xFFFFFFFFu) {
    throw FormatError("header", "k or d_raw exceeds u32");
  }
  detail::ByteWriter w;
  w.magic("FFE1");
  w.u32(kDatasetFormatVersion);
  w.u64(ds.layout.n_img);
  w.u32(static_cast<std::uint32_t>(ds.layout.k));
  w.u32(static_cast<std::uint32_t>(ds.dim()));
  w.u8(ds.images_clean ? 1 : 0);
  w.u8(ds.labels ? 1 : 0);
  w.u8(ds.planted ? 1 : 0);
  w.u8(0);
  put_matrix(w, ds.images);
  if (ds.images_clean) put_matrix(w, *ds.images_clean);
  put_matrix(w, ds.texts);
  if (ds.labels) {
    for (auto l : *ds.labels) w.u32(l);
  }
  if (ds.planted) {
    w.u64(ds.planted->size());
    for (const auto& p : *ds.planted) {
      w.u64(p.image);
      w.u64(p.caption);
    }
  }
  return w.take();
}

EmbeddingDataset decode_dataset(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic("FFE1");
  const auto version = r.u32("format_version");
  if (version != kDatasetFormatVersion) {
    throw FormatError("format_version",
                      "unsupported version " + std::to_string(version));
  }
  EmbeddingDataset ds;
  ds.layout.n_img = r.u64("n_img");
  ds.layout.k = r.u32("k");
  const std::size_t d = r.u32("d_raw");
  ds.layout.validate();
  if (d == 0) throw FormatError("d_raw", "must be >= 1");
  const bool has_clean = get_flag(r, "has_clean_view");
  const bool has_labels = get_flag(r, "has_labels");
  const bool has_planted = get_flag(r, "has_planted");
  if (r.u8("padding") != 0) throw FormatError("padding", "must be zero");

  // Check the fixed-size part up front so absurd headers fail fast.
  const std::size_t n_img = ds.layout.n_img;
  const std::size_t n_txt = ds.layout.n_txt();
  if (n_txt / ds.layout.k != n_img) throw FormatError("n_img", "overflow");
  std::size_t fixed = (n_img * (has_clean ? 2 : 1) + n_txt) * d * 4;
  if (has_labels) fixed += n_img * 4;
  r.need(fixed, "payload");

  ds.images = get_matrix(r, n_img, d, "image_embeddings");
  if (has_clean) ds.images_clean = get_matrix(r, n_img, d, "clean_view");
  ds.texts = get_matrix(r, n_txt, d, "text_embeddings");
  if (has_labels) {
    std::vector<std::uint32_t> labels(n_img);
    for (auto& l : labels) l = r.u32("labels");
    ds.labels = std::move(labels);
  }
  if (has_planted) {
    const auto count = r.u64("planted");
    if (count > r.remaining() / 16) {
      throw FormatError("planted", "truncated payload: header claims " +
                                       std::to_string(count) + " pairs");
    }
    std::vector<PlantedPair> pairs(count);
    for (auto& p : pairs) {
      p.image = r.u64("planted");
      p.caption = r.u64("planted");
    }
    ds.planted = std::move(pairs);
  }
  if (r.remaining() != 0) {
    throw FormatError("payload", std::to_string(r.remaining()) +
                                     " trailing bytes after last block");
  }
  ds.validate();
  return ds;
}

nlohmann::json dataset_manifest(const EmbeddingDataset& ds) {
  return {
      {"format", "FFE1"},
      {"format_version", kDatasetFormatVersion},
      {"n_img", ds.layout.n_img},
      {"k", ds.layout.k},
      {"n_txt", ds.layout.n_txt()},
      {"d_raw", ds.dim()},
      {"has_clean_view", ds.images_clean.has_value()},
      {"has_labels", ds.labels.has_value()},
      {"has_planted", ds.planted.has_value()},
      {"planted_count", ds.planted ? ds.planted->size() : 0},
  };
}

void write_dataset(const EmbeddingDataset& ds, const fs::path& stem,
                   const WriteOptions& options) {
  const fs::path base = strip_ffe(stem);
  const fs::path bin = with_suffix(base, ".ffe");
  const fs::path manifest_path = with_suffix(base, ".json");
  if (!options.overwrite) {
    for (const auto& p : {bin, manifest_path}) {
      if (fs::exists(p)) {
        throw std::runtime_error("path collision: " + p.string() +
                                 " already exists");
      }
    }
  }
  const auto bytes = encode_dataset(ds);
  detail::write_file(bin, bytes);

  nlohmann::json manifest = dataset_manifest(ds);
  manifest.update(options.manifest_extra);
  const std::string text = manifest.dump(2) + "\n";
  detail::write_file(manifest_path,
                     {reinterpret_cast<const std::uint8_t*>(text.data()),
                      text.size()});
}

EmbeddingDataset read_dataset(const fs::path& stem) {
  const fs::path bin = with_suffix(strip_ffe(stem), ".ffe");
  const auto bytes = detail::read_file(bin);
  return decode_dataset(bytes);
}

Batch sample_batch(const EmbeddingDataset& ds, std::size_t batch_images,
                   std::uint64_t seed, CaptionMode mode) {
  if (batch_images == 0) {
    throw std::invalid_argument("sample_batch: batch_images must be >= 1");
  }
  const std::size_t n = ds.layout.n_img;
  const std::size_t k = ds.layout.k;
  if (batch_images > n) {
    throw std::invalid_argument("sample_batch: batch_images " +
                                std::to_string(batch_images) +
                                " exceeds n_img " + std::to_string(n));
  }
  Rng rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < batch_images; ++i) {
    std::swap(order[i], order[i + rng.below(n - i)]);
  }

  Batch b;
  b.image_indices.assign(order.begin(), order.begin() + batch_images);
  for (std::size_t img : b.image_indices) {
    if (mode == CaptionMode::joint_k) {
      for (std::size_t t = 0; t < k; ++t) b.caption_indices.push_back(img * k + t);
    } else {
      b.caption_indices.push_back(img * k + rng.below(k));
    }
  }
  b.layout = {batch_images, mode == CaptionMode::joint_k ? k : 1};

  const std::size_t d = ds.dim();
  auto gather = [d](const EmbeddingMatrix& src,
                    const std::vector<std::size_t>& idx) {
    EmbeddingMatrix out(idx.size(), d);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::ranges::copy(src.row(idx[r]), out.row(r).begin());
    }
    return out;
  };
  b.images = gather(ds.images, b.image_indices);
  b.images_clean = gather(ds.reference_images(), b.image_indices);
  b.texts = gather(ds.texts, b.caption_indices);
  return b;
}

EmbeddingDataset restrict_captions(const EmbeddingDataset& ds, std::size_t k) {
  const std::size_t old_k = ds.layout.k;
  if (k == 0 || k > old_k) {
    throw std::invalid_argument("restrict_captions: k must be in [1, " +
                                std::to_string(old_k) + "]");
  }
  EmbeddingDataset out = ds;
  out.layout.k = k;
  out.texts = EmbeddingMatrix(ds.layout.n_img * k, ds.dim());
  for (std::size_t i = 0; i < ds.layout.n_img; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      std::ranges::copy(ds.texts.row(i * old_k + t),
                        out.texts.row(i * k + t).begin());
    }
  }
  if (ds.planted) {
    std::vector<PlantedPair> kept;
    for (const auto& p : *ds.planted) {
      const std::size_t t = p.caption % old_k;
      if (t < k) kept.push_back({p.image, (p.caption / old_k) * k + t});
    }
    out.planted = std::move(kept);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator

void SynthConfig::validate() const {
  auto fail = [](const std::string& m) {
    throw std::invalid_argument("synthetic config: " + m);
  };
  if (n_classes < 2) fail("n_classes must be >= 2");
  if (images_per_class < 1) fail("images_per_class must be >= 1");
  if (k < 1) fail("k must be >= 1");
  if (d_raw < 4) fail("d_raw must be >= 4");
  if (!(image_noise_std >= 0) || !(caption_noise_std >= 0) ||
      !(image_aug_noise_std >= 0)) {
    fail("noise standard deviations must be >= 0");
  }
  if (!(duplicate_fraction >= 0 && duplicate_fraction <= 1)) {
    fail("duplicate_fraction must be in [0, 1]");
  }
  if (!(mislabel_fraction >= 0 && mislabel_fraction <= 1)) {
    fail("mislabel_fraction must be in [0, 1]");
  }
  if (!(duplicate_radius > 0 && duplicate_radius < 1)) {
    fail("duplicate_radius must be in (0, 1)");
  }
  if (duplicate_fraction > 0 && images_per_class < 2) {
    fail("duplicate_fraction > 0 needs images_per_class >= 2");
  }
}

nlohmann::json to_json(const SynthConfig& c) {
  return {{"n_classes", c.n_classes},
          {"images_per_class", c.images_per_class},
          {"k", c.k},
          {"d_raw", c.d_raw},
          {"image_noise_std", c.image_noise_std},
          {"caption_noise_std", c.caption_noise_std},
          {"image_aug_noise_std", c.image_aug_noise_std},
          {"duplicate_fraction", c.duplicate_fraction},
          {"mislabel_fraction", c.mislabel_fraction},
          {"cross_margin", c.cross_margin},
          {"duplicate_radius", c.duplicate_radius}};
}

namespace {

using Vec = std::vector<double>;

void normalize(Vec& v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double n = std::sqrt(sq);
  if (n > 0) {
    for (double& x : v) x /= n;
  }
}

Vec perturbed(const Vec& base, double std_dev, Rng& rng) {
  Vec v = base;
  for (double& x : v) x += std_dev * rng.normal();
  normalize(v);
  return v;
}

// Random unit vectors, Gram-Schmidt orthogonalized while d >= n_classes.
std::vector<Vec> make_prototypes(const SynthConfig& c, Rng& rng) {
  std::vector<Vec> protos;
  for (std::size_t j = 0; j < c.n_classes; ++j) {
    Vec v(c.d_raw);
    for (double& x : v) x = rng.normal();
    if (c.d_raw >= c.n_classes) {
      for (const Vec& p : protos) {
        double proj = 0.0;
        for (std::size_t t = 0; t < v.size(); ++t) proj += v[t] * p[t];
        for (std::size_t t = 0; t < v.size(); ++t) v[t] -= proj * p[t];
      }
    }
    normalize(v);
    protos.push_back(std::move(v));
  }
  return protos;
}

void store_row(EmbeddingMatrix& m, std::size_t r, const Vec& v) {
  auto row = m.row(r);
  for (std::size_t t = 0; t < v.size(); ++t) row[t] = static_cast<float>(v[t]);
}

double row_cosine(const EmbeddingMatrix& a, std::size_t i,
                  const EmbeddingMatrix& b, std::size_t j) {
  double s = 0.0;
  auto ar = a.row(i);
  auto br = b.row(j);
  for (std::size_t t = 0; t < ar.size(); ++t) {
    s += static_cast<double>(ar[t]) * br[t];
  }
  return s;
}

constexpr std::uint64_t kPrototypeStream = 1;
constexpr std::uint64_t kTrainStream = 2;
constexpr std::uint64_t kHoldoutStream = 3;

}  // namespace

SynthResult generate_synthetic_traced(const SynthConfig& config,
                                      std::uint64_t seed) {
  config.validate();
  Rng proto_rng(mix_seed(seed, kPrototypeStream));
  const auto protos = make_prototypes(config, proto_rng);
  Rng rng(mix_seed(seed, kTrainStream));

  const std::size_t n_classes = config.n_classes;
  const std::size_t per_class = config.images_per_class;
  const std::size_t n_img = n_classes * per_class;
  const std::size_t k = config.k;
  const std::size_t n_txt = n_img * k;
  const std::size_t d = config.d_raw;

  std::vector<std::uint32_t> labels(n_img);
  for (std::size_t i = 0; i < n_img; ++i) {
    labels[i] = static_cast<std::uint32_t>(i / per_class);
  }

  // Duplicate quota, spread evenly over classes; every class keeps at least
  // one non-duplicate image to serve as a source.
  const auto total_dups = static_cast<std::size_t>(
      std::llround(config.duplicate_fraction * static_cast<double>(n_img)));
  std::vector<std::size_t> quota(n_classes, total_dups / n_classes);
  for (std::size_t c = 0; c < total_dups % n_classes; ++c) ++quota[c];
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (quota[c] > per_class - 1) {
      throw std::invalid_argument(
          "synthetic config: duplicate_fraction " +
          std::to_string(config.duplicate_fraction) +
          " is infeasible with images_per_class " + std::to_string(per_class));
    }
  }

  SynthTrace trace;
  trace.duplicate_margin =
      std::sqrt(1.0 - config.duplicate_radius * config.duplicate_radius);
  trace.cross_margin = config.cross_margin;

  std::vector<Vec> clean(n_img);
  for (std::size_t i = 0; i < n_img; ++i) {
    clean[i] = perturbed(protos[labels[i]], config.image_noise_std, rng);
  }
  std::vector<std::size_t> source_of(n_img);
  std::iota(source_of.begin(), source_of.end(), 0);
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::vector<std::size_t> members(per_class);
    std::iota(members.begin(), members.end(), c * per_class);
    rng.shuffle(std::span(members));
    const std::size_t dups = quota[c];
    for (std::size_t t = 0; t < dups; ++t) {
      const std::size_t img = members[t];
      const std::size_t src = members[dups + rng.below(per_class - dups)];
      Vec offset(d);
      for (double& x : offset) x = rng.normal();
      normalize(offset);
      Vec v = clean[src];
      for (std::size_t j = 0; j < d; ++j) v[j] += config.duplicate_radius * offset[j];
      normalize(v);
      clean[img] = std::move(v);
      source_of[img] = src;
    }
  }

  EmbeddingDataset ds;
  ds.layout = {n_img, k};
  ds.images = EmbeddingMatrix(n_img, d);
  ds.images_clean = EmbeddingMatrix(n_img, d);
  ds.texts = EmbeddingMatrix(n_txt, d);
  for (std::size_t i = 0; i < n_img; ++i) {
    store_row(*ds.images_clean, i, clean[i]);
    store_row(ds.images, i, perturbed(clean[i], config.image_aug_noise_std, rng));
  }

  const auto total_mislabels = static_cast<std::size_t>(
      std::llround(config.mislabel_fraction * static_cast<double>(n_txt)));
  std::vector<std::size_t> caption_order(n_txt);
  std::iota(caption_order.begin(), caption_order.end(), 0);
  for (std::size_t i = 0; i < total_mislabels; ++i) {
    std::swap(caption_order[i], caption_order[i + rng.below(n_txt - i)]);
  }
  std::vector<bool> mislabeled(n_txt, false);
  for (std::size_t i = 0; i < total_mislabels; ++i) {
    mislabeled[caption_order[i]] = true;
  }

  trace.caption_class.resize(n_txt);
  for (std::size_t c = 0; c < n_txt; ++c) {
    const std::size_t img = c / k;
    if (mislabeled[c]) {
      auto wrong = static_cast<std::uint32_t>(rng.below(n_classes - 1));
      if (wrong >= labels[img]) ++wrong;
      const Vec latent = perturbed(protos[wrong], config.image_noise_std, rng);
      store_row(ds.texts, c, perturbed(latent, config.caption_noise_std, rng));
      trace.caption_class[c] = wrong;
      trace.mislabeled_captions.push_back(c);
    } else {
      store_row(ds.texts, c, perturbed(clean[img], config.caption_noise_std, rng));
      trace.caption_class[c] = labels[img];
    }
  }

  // Planted positives: all captions across each duplicate cluster, plus
  // foreign images that match a mislabeled caption above cross_margin.
  const EmbeddingMatrix& cv = *ds.images_clean;
  std::vector<PlantedPair> planted;
  for (std::size_t img = 0; img < n_img; ++img) {
    if (source_of[img] == img) continue;
    trace.duplicates.push_back(
        {img, source_of[img], row_cosine(cv, img, cv, source_of[img])});
  }
  for (std::size_t a = 0; a < n_img; ++a) {
    for (std::size_t b = 0; b < n_img; ++b) {
      if (a == b) continue;
      if (source_of[a] != source_of[b]) continue;
      for (std::size_t t = 0; t < k; ++t) planted.push_back({a, b * k + t});
    }
  }
  for (std::size_t c : trace.mislabeled_captions) {
    const std::uint32_t cls = trace.caption_class[c];
    for (std::size_t j = cls * per_class; j < (cls + 1) * per_class; ++j) {
      if (j == c / k) continue;
      if (row_cosine(cv, j, ds.texts, c) > config.cross_margin) {
        planted.push_back({j, c});
      }
    }
  }
  std::ranges::sort(planted);
  planted.erase(std::unique(planted.begin(), planted.end()), planted.end());

  std::vector<bool> is_planted(n_img * n_txt, false);
  for (const auto& p : planted) is_planted[p.image * n_txt + p.caption] = true;
  for (std::size_t i = 0; i < n_img; ++i) {
    for (std::size_t c = 0; c < n_txt; ++c) {
      const std::size_t owner = c / k;
      if (owner == i || is_planted[i * n_txt + c]) continue;
      if (labels[i] == labels[owner] || labels[i] == trace.caption_class[c]) {
        continue;
      }
      trace.cross_class_max_it =
          std::max(trace.cross_class_max_it, row_cosine(cv, i, ds.texts, c));
      trace.cross_class_max_ii =
          std::max(trace.cross_class_max_ii, row_cosine(cv, i, cv, owner));
    }
  }

  ds.labels = std::move(labels);
  ds.planted = std::move(planted);
  return {std::move(ds), std::move(trace)};
}

EmbeddingDataset generate_synthetic(const SynthConfig& config,
                                    std::uint64_t seed) {
  return generate_synthetic_traced(config, seed).dataset;
}

EmbeddingDataset generate_holdout(const SynthConfig& config, std::uint64_t seed,
                                  std::size_t images_per_class) {
  SynthConfig c = config;
  c.images_per_class = images_per_class;
  c.duplicate_fraction = 0.0;
  c.mislabel_fraction = 0.0;
  c.validate();
  Rng proto_rng(mix_seed(seed, kPrototypeStream));
  const auto protos = make_prototypes(config, proto_rng);
  Rng rng(mix_seed(seed, kHoldoutStream));

  const std::size_t n_img = c.n_classes * images_per_class;
  EmbeddingDataset ds;
  ds.layout = {n_img, c.k};
  ds.images = EmbeddingMatrix(n_img, c.d_raw);
  ds.images_clean = EmbeddingMatrix(n_img, c.d_raw);
  ds.texts = EmbeddingMatrix(n_img * c.k, c.d_raw);
  std::vector<std::uint32_t> labels(n_img);
  for (std::size_t i = 0; i < n_img; ++i) {
    labels[i] = static_cast<std::uint32_t>(i / images_per_class);
    const Vec clean = perturbed(protos[labels[i]], c.image_noise_std, rng);
    store_row(*ds.images_clean, i, clean);
    store_row(ds.images, i, perturbed(clean, c.image_aug_noise_std, rng));
    for (std::size_t t = 0; t < c.k; ++t) {
      store_row(ds.texts, i * c.k + t, perturbed(clean, c.caption_noise_std, rng));
    }
  }
  ds.labels = std::move(labels);
  return ds;
}

}  // namespace mpt
