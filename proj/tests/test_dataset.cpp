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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "json.hpp"

#include "mpt/dataset.hpp"
#include "support.hpp"

using namespace mpt;
using mpt::testing::gaussian_matrix;
using mpt::testing::scratch_dir;

namespace {

EmbeddingDataset small_dataset(std::size_t n_img, std::size_t k, std::size_t d,
                               std::uint64_t seed, bool extras) {
  EmbeddingDataset ds;
  ds.layout = {n_img, k};
  ds.images = gaussian_matrix<float>(n_img, d, seed);
  ds.texts = gaussian_matrix<float>(n_img * k, d, seed + 1);
  if (extras) {
    ds.images_clean = gaussian_matrix<float>(n_img, d, seed + 2);
    std::vector<std::uint32_t> labels(n_img);
    for (std::size_t i = 0; i < n_img; ++i) labels[i] = static_cast<std::uint32_t>(i % 3);
    ds.labels = labels;
    ds.planted = std::vector<PlantedPair>{{0, k}, {1, 0}};
  }
  return ds;
}

std::string field_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const FormatError& e) {
    return e.field();
  }
  return "<no error>";
}

void put_u64(std::vector<std::uint8_t>& bytes, std::size_t offset, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) bytes[offset + b] = static_cast<std::uint8_t>(v >> (8 * b));
}

float clean_cosine(const EmbeddingDataset& ds, std::size_t a, std::size_t b) {
  const auto& m = *ds.images_clean;
  double s = 0;
  for (std::size_t t = 0; t < m.cols(); ++t) s += double(m(a, t)) * m(b, t);
  return static_cast<float>(s);
}

}  // namespace

TEST_CASE("batch layout arithmetic") {
  const BatchLayout l{3, 5};
  CHECK(l.n_txt() == 15);
  CHECK(l.image_of(0) == 0);
  CHECK(l.image_of(4) == 0);
  CHECK(l.image_of(5) == 1);
  CHECK(l.is_ground_truth(2, 14));
  CHECK_FALSE(l.is_ground_truth(1, 14));
  CHECK_THROWS_AS(BatchLayout({0, 1}).validate(), FormatError);
  CHECK_THROWS_AS(BatchLayout({1, 0}).validate(), FormatError);
}

TEST_CASE("round trips") {
  const auto dir = scratch_dir("ds");
  SUBCASE("two images, k = 1, d = 4") {
    const auto ds = small_dataset(2, 1, 4, 1, false);
    write_dataset(ds, dir / "a");
    CHECK(read_dataset(dir / "a") == ds);
  }
  SUBCASE("eight images, k = 5, d = 16, with labels") {
    auto ds = small_dataset(8, 5, 16, 2, true);
    ds.planted.reset();
    write_dataset(ds, dir / "b");
    const auto back = read_dataset(dir / "b");
    CHECK(back == ds);
    REQUIRE(back.labels);
    CHECK(*back.labels == *ds.labels);
    CHECK(encode_dataset(back) == encode_dataset(ds));
  }
  SUBCASE("planted pairs are preserved exactly") {
    const auto ds = small_dataset(4, 2, 3, 3, true);
    write_dataset(ds, dir / "c.ffe");
    const auto back = read_dataset(dir / "c");
    REQUIRE(back.planted);
    CHECK(*back.planted == *ds.planted);
  }
  SUBCASE("payload floats survive bit-exactly") {
    auto ds = small_dataset(3, 2, 5, 4, false);
    ds.images(0, 0) = std::nextafter(1.0f, 2.0f);
    ds.images(1, 1) = -0.0f;
    ds.texts(2, 3) = 1e-40f;  // subnormal
    const auto back = decode_dataset(encode_dataset(ds));
    CHECK(std::memcmp(back.images.data().data(), ds.images.data().data(),
                      ds.images.size() * 4) == 0);
    CHECK(std::memcmp(back.texts.data().data(), ds.texts.data().data(),
                      ds.texts.size() * 4) == 0);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("header layout is little-endian and fixed") {
  const auto ds = small_dataset(2, 3, 4, 5, true);
  const auto bytes = encode_dataset(ds);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "FFE1");
  CHECK(bytes[4] == 1);
  CHECK(bytes[8] == 2);   // n_img
  CHECK(bytes[16] == 3);  // k
  CHECK(bytes[20] == 4);  // d_raw
  CHECK(bytes[24] == 1);
  CHECK(bytes[25] == 1);
  CHECK(bytes[26] == 1);
  CHECK(bytes[27] == 0);
  const std::size_t expected = 28 + (2 * 2 + 6) * 4 * 4 + 2 * 4 + 8 + 2 * 16;
  CHECK(bytes.size() == expected);
}

TEST_CASE("manifest mirrors the header") {
  const auto dir = scratch_dir("manifest");
  const auto ds = small_dataset(4, 2, 3, 6, true);
  WriteOptions opts;
  opts.manifest_extra = {{"seed", 9}};
  write_dataset(ds, dir / "m", opts);
  std::ifstream in(dir / "m.json");
  const auto j = nlohmann::json::parse(in);
  CHECK(j["format"] == "FFE1");
  CHECK(j["n_img"] == 4);
  CHECK(j["k"] == 2);
  CHECK(j["n_txt"] == 8);
  CHECK(j["d_raw"] == 3);
  CHECK(j["planted_count"] == 2);
  CHECK(j["seed"] == 9);
  std::filesystem::remove_all(dir);
}

TEST_CASE("read errors name the field") {
  const auto ds = small_dataset(3, 2, 4, 7, true);
  const auto good = encode_dataset(ds);

  SUBCASE("corrupted magic") {
    auto bytes = good;
    bytes[0] = 'X';
    CHECK(field_of([&] { decode_dataset(bytes); }) == "magic");
  }
  SUBCASE("unsupported version") {
    auto bytes = good;
    bytes[4] = 2;
    CHECK(field_of([&] { decode_dataset(bytes); }) == "format_version");
  }
  SUBCASE("header claims more rows than the payload holds") {
    auto bytes = good;
    put_u64(bytes, 8, 1000);
    CHECK(field_of([&] { decode_dataset(bytes); }) == "payload");
    try {
      decode_dataset(bytes);
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("truncated") != std::string::npos);
    }
  }
  SUBCASE("truncated planted block") {
    auto bytes = good;
    bytes.resize(bytes.size() - 5);
    CHECK(field_of([&] { decode_dataset(bytes); }) == "planted");
  }
  SUBCASE("trailing bytes") {
    auto bytes = good;
    bytes.push_back(0);
    CHECK(field_of([&] { decode_dataset(bytes); }) == "payload");
  }
  SUBCASE("zero k") {
    auto bytes = good;
    bytes[16] = 0;
    CHECK(field_of([&] { decode_dataset(bytes); }) == "k");
  }
  SUBCASE("empty file") {
    CHECK(field_of([&] { decode_dataset({}); }) == "magic");
  }
}

TEST_CASE("invalid datasets are rejected before writing") {
  const auto dir = scratch_dir("invalid");
  SUBCASE("caption count disagrees with the layout") {
    auto ds = small_dataset(3, 2, 4, 8, false);
    ds.layout.k = 3;
    CHECK(field_of([&] { write_dataset(ds, dir / "x"); }) == "text_embeddings");
  }
  SUBCASE("planted pair on the ground truth") {
    auto ds = small_dataset(3, 2, 4, 8, true);
    ds.planted = std::vector<PlantedPair>{{1, 2}};
    CHECK(field_of([&] { write_dataset(ds, dir / "x"); }) == "planted");
  }
  SUBCASE("planted index out of range") {
    auto ds = small_dataset(3, 2, 4, 8, true);
    ds.planted = std::vector<PlantedPair>{{0, 6}};
    CHECK(field_of([&] { write_dataset(ds, dir / "x"); }) == "planted");
  }
  SUBCASE("label count") {
    auto ds = small_dataset(3, 2, 4, 8, true);
    ds.labels->pop_back();
    CHECK(field_of([&] { write_dataset(ds, dir / "x"); }) == "labels");
  }
  CHECK_FALSE(std::filesystem::exists(dir / "x.ffe"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("path collisions are errors unless overwriting") {
  const auto dir = scratch_dir("collide");
  const auto ds = small_dataset(2, 1, 4, 9, false);
  write_dataset(ds, dir / "a");
  CHECK_THROWS_AS(write_dataset(ds, dir / "a"), std::runtime_error);
  WriteOptions opts;
  opts.overwrite = true;
  CHECK_NOTHROW(write_dataset(ds, dir / "a", opts));
  CHECK_THROWS(read_dataset(dir / "missing"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("sample_batch") {
  const auto ds = small_dataset(10, 5, 4, 10, true);
  SUBCASE("full batch keeps every caption contiguously") {
    const auto b = sample_batch(ds, 10, 1);
    CHECK(b.texts.rows() == 5 * b.images.rows());
    CHECK(b.layout.n_img == 10);
    CHECK(b.layout.k == 5);
    for (std::size_t r = 0; r < 10; ++r) {
      for (std::size_t t = 0; t < 5; ++t) {
        CHECK(b.caption_indices[r * 5 + t] == b.image_indices[r] * 5 + t);
      }
    }
    std::set<std::size_t> imgs(b.image_indices.begin(), b.image_indices.end());
    CHECK(imgs.size() == 10);
  }
  SUBCASE("random one of k") {
    const auto b = sample_batch(ds, 6, 2, CaptionMode::random_one_of_k);
    CHECK(b.texts.rows() == b.images.rows());
    CHECK(b.layout.k == 1);
    for (std::size_t r = 0; r < 6; ++r) {
      CHECK(b.caption_indices[r] / 5 == b.image_indices[r]);
    }
  }
  SUBCASE("same seed, same selection") {
    const auto a = sample_batch(ds, 4, 3, CaptionMode::random_one_of_k);
    const auto b = sample_batch(ds, 4, 3, CaptionMode::random_one_of_k);
    CHECK(a.image_indices == b.image_indices);
    CHECK(a.caption_indices == b.caption_indices);
    CHECK(a.texts == b.texts);
  }
  SUBCASE("rows are gathered from the right views") {
    const auto b = sample_batch(ds, 3, 4);
    for (std::size_t r = 0; r < 3; ++r) {
      const auto src = b.image_indices[r];
      CHECK(std::ranges::equal(b.images.row(r), ds.images.row(src)));
      CHECK(std::ranges::equal(b.images_clean.row(r), ds.images_clean->row(src)));
    }
  }
  SUBCASE("caption groups are never split") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto b = sample_batch(ds, 1 + seed % 10, seed);
      std::set<std::size_t> expected;
      for (auto i : b.image_indices) {
        for (std::size_t t = 0; t < 5; ++t) expected.insert(i * 5 + t);
      }
      CHECK(std::set<std::size_t>(b.caption_indices.begin(),
                                  b.caption_indices.end()) == expected);
    }
  }
  SUBCASE("bad sizes") {
    CHECK_THROWS_AS(sample_batch(ds, 0, 1), std::invalid_argument);
    CHECK_THROWS_AS(sample_batch(ds, 11, 1), std::invalid_argument);
  }
}

TEST_CASE("restrict_captions keeps the first captions and remaps plants") {
  auto ds = small_dataset(3, 4, 2, 11, true);
  ds.planted = std::vector<PlantedPair>{{0, 4}, {0, 7}, {2, 1}};
  const auto r = restrict_captions(ds, 2);
  CHECK(r.layout.k == 2);
  CHECK(std::ranges::equal(r.texts.row(3), ds.texts.row(5)));
  REQUIRE(r.planted);
  CHECK(*r.planted == std::vector<PlantedPair>{{0, 2}, {2, 1}});
  CHECK_NOTHROW(r.validate());
  CHECK_THROWS_AS(restrict_captions(ds, 5), std::invalid_argument);
}

TEST_CASE("generator without noise events plants nothing") {
  SynthConfig c;
  c.n_classes = 3;
  c.images_per_class = 4;
  const auto ds = generate_synthetic(c, 1);
  REQUIRE(ds.planted);
  CHECK(ds.planted->empty());
  CHECK(ds.layout.n_img == 12);
  CHECK(ds.texts.rows() == 60);
  REQUIRE(ds.labels);
  CHECK(ds.images_clean);
}

TEST_CASE("generator plants exactly the configured duplicates") {
  SynthConfig c;
  c.n_classes = 4;
  c.images_per_class = 8;
  c.duplicate_fraction = 0.25;
  const auto res = generate_synthetic_traced(c, 5);
  const auto& ds = res.dataset;
  CHECK(res.trace.duplicates.size() == 8);
  std::set<PlantedPair> planted(ds.planted->begin(), ds.planted->end());
  for (const auto& dup : res.trace.duplicates) {
    CHECK((*ds.labels)[dup.image] == (*ds.labels)[dup.source]);
    // Both directions of the pair are recorded for every caption.
    for (std::size_t t = 0; t < c.k; ++t) {
      CHECK(planted.count({dup.image, dup.source * c.k + t}) == 1);
      CHECK(planted.count({dup.source, dup.image * c.k + t}) == 1);
    }
    CHECK(dup.clean_cosine > 0.95);
    CHECK(dup.clean_cosine > res.trace.duplicate_margin);
  }
  for (const auto& p : planted) CHECK_FALSE(ds.layout.is_ground_truth(p.image, p.caption));
}

TEST_CASE("planted duplicates exceed the recorded margin post hoc") {
  SynthConfig c;
  c.n_classes = 5;
  c.images_per_class = 6;
  c.duplicate_fraction = 0.4;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto res = generate_synthetic_traced(c, seed);
    for (const auto& dup : res.trace.duplicates) {
      CHECK(clean_cosine(res.dataset, dup.image, dup.source) >
            res.trace.duplicate_margin - 1e-6);
    }
  }
}

TEST_CASE("mislabeled captions come from another class") {
  SynthConfig c;
  c.n_classes = 4;
  c.images_per_class = 5;
  c.mislabel_fraction = 0.1;
  const auto res = generate_synthetic_traced(c, 3);
  CHECK(res.trace.mislabeled_captions.size() == 10);
  for (auto cap : res.trace.mislabeled_captions) {
    const auto owner = res.dataset.layout.image_of(cap);
    CHECK(res.trace.caption_class[cap] != (*res.dataset.labels)[owner]);
  }
  // Cross-assigned plants point a mislabeled caption at an image of the
  // class it was drawn from.
  for (const auto& p : *res.dataset.planted) {
    CHECK((*res.dataset.labels)[p.image] == res.trace.caption_class[p.caption]);
  }
}

TEST_CASE("generator is deterministic") {
  SynthConfig c;
  c.duplicate_fraction = 0.2;
  c.mislabel_fraction = 0.05;
  CHECK(encode_dataset(generate_synthetic(c, 9)) ==
        encode_dataset(generate_synthetic(c, 9)));
  CHECK(encode_dataset(generate_synthetic(c, 9)) !=
        encode_dataset(generate_synthetic(c, 10)));
}

TEST_CASE("infeasible generator configs are errors") {
  SynthConfig c;
  c.images_per_class = 1;
  c.duplicate_fraction = 0.5;
  CHECK_THROWS_AS(generate_synthetic(c, 1), std::invalid_argument);
  c = {};
  c.n_classes = 1;
  CHECK_THROWS_AS(generate_synthetic(c, 1), std::invalid_argument);
  c = {};
  c.d_raw = 3;
  CHECK_THROWS_AS(generate_synthetic(c, 1), std::invalid_argument);
  c = {};
  c.mislabel_fraction = 1.5;
  CHECK_THROWS_AS(generate_synthetic(c, 1), std::invalid_argument);
}

TEST_CASE("holdout shares class structure with the training set") {
  SynthConfig c;
  c.n_classes = 4;
  c.images_per_class = 6;
  const auto train = generate_synthetic(c, 2);
  const auto eval = generate_holdout(c, 2, 3);
  CHECK(eval.layout.n_img == 12);
  CHECK(eval.dim() == train.dim());
  // A holdout image is closer to its class's training images than to others.
  std::size_t nearest_same = 0;
  for (std::size_t i = 0; i < eval.layout.n_img; ++i) {
    double best = -2;
    std::uint32_t best_label = 0;
    for (std::size_t j = 0; j < train.layout.n_img; ++j) {
      double s = 0;
      for (std::size_t t = 0; t < train.dim(); ++t) {
        s += double(eval.images_clean->operator()(i, t)) * (*train.images_clean)(j, t);
      }
      if (s > best) {
        best = s;
        best_label = (*train.labels)[j];
      }
    }
    if (best_label == (*eval.labels)[i]) ++nearest_same;
  }
  CHECK(nearest_same == eval.layout.n_img);
  CHECK(encode_dataset(eval) != encode_dataset(generate_synthetic(c, 2)));
}
