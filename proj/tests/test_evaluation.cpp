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

#include <algorithm>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "mpt/ablation.hpp"
#include "mpt/evaluation.hpp"
#include "support.hpp"

using namespace mpt;
using mpt::testing::unit_rows;

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t n = 0; n < a.size(); ++n) s += a[n] * b[n];
  return s;
}

// Indices ordered by descending score, lower index first on ties.
std::vector<std::size_t> ranking(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

double oracle_text_recall(const MatrixD& img, const MatrixD& txt, const BatchLayout& l,
                          std::size_t K) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < l.n_img; ++i) {
    std::vector<double> s(l.n_txt());
    for (std::size_t c = 0; c < l.n_txt(); ++c) s[c] = dot(img.row(i), txt.row(c));
    const auto order = ranking(s);
    for (std::size_t r = 0; r < K; ++r) {
      if (l.is_ground_truth(i, order[r])) {
        ++hits;
        break;
      }
    }
  }
  return double(hits) / double(l.n_img);
}

double oracle_image_recall(const MatrixD& img, const MatrixD& txt, const BatchLayout& l,
                           std::size_t K) {
  std::size_t hits = 0;
  for (std::size_t c = 0; c < l.n_txt(); ++c) {
    std::vector<double> s(l.n_img);
    for (std::size_t i = 0; i < l.n_img; ++i) s[i] = dot(img.row(i), txt.row(c));
    const auto order = ranking(s);
    for (std::size_t r = 0; r < K; ++r) {
      if (order[r] == l.image_of(c)) {
        ++hits;
        break;
      }
    }
  }
  return double(hits) / double(l.n_txt());
}

// Captions equal to their image's embedding.
MatrixD repeat_rows(const MatrixD& img, std::size_t k) {
  MatrixD t(img.rows() * k, img.cols());
  for (std::size_t c = 0; c < t.rows(); ++c) {
    std::copy(img.row(c / k).begin(), img.row(c / k).end(), t.row(c).begin());
  }
  return t;
}

}  // namespace

TEST_CASE("identical embeddings retrieve perfectly") {
  const BatchLayout l{12, 3};
  const auto img = unit_rows(12, 16, 1);
  const auto txt = repeat_rows(img, 3);
  const std::size_t ks[] = {1, 5};
  const auto r = recall_at_k(img, txt, l, ks);
  CHECK(r.text.recall_at.at(1) == 1.0);
  CHECK(r.image.recall_at.at(1) == 1.0);
  CHECK(r.text.n_queries == 12);
  CHECK(r.image.n_queries == 36);
}

TEST_CASE("orthogonal distractors") {
  // Image i = e_i with caption e_i, except image 0 whose caption is -e_0.
  const BatchLayout l{4, 1};
  MatrixD img(4, 6, 0.0), txt(4, 6, 0.0);
  for (std::size_t i = 0; i < 4; ++i) img(i, i) = txt(i, i) = 1.0;
  txt(0, 0) = -1.0;
  const std::size_t ks[] = {1, 3, 4};
  const auto r = recall_at_k(img, txt, l, ks);
  // Image 0 scores -1 on its own caption and 0 on the other three.
  CHECK(r.text.recall_at.at(1) == 0.75);
  CHECK(r.text.recall_at.at(3) == 0.75);
  CHECK(r.text.recall_at.at(4) == 1.0);
  CHECK(r.image.recall_at.at(1) == 0.75);
  CHECK(r.image.recall_at.at(4) == 1.0);
}

TEST_CASE("retrieval matches a brute-force sort on random inputs") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const BatchLayout l{3 + rng.below(10), 1 + rng.below(4)};
    const auto img = unit_rows(l.n_img, 5, 100 + seed);
    auto txt = unit_rows(l.n_txt(), 5, 200 + seed);
    // Plant some exact ties by copying rows.
    if (l.n_txt() > 2) {
      std::copy(txt.row(0).begin(), txt.row(0).end(), txt.row(l.n_txt() - 1).begin());
    }
    std::vector<std::size_t> ks(l.n_img);
    std::iota(ks.begin(), ks.end(), 1);
    const auto r = recall_at_k(img, txt, l, ks);
    for (std::size_t K : ks) {
      CHECK(r.text.recall_at.at(K) == oracle_text_recall(img, txt, l, K));
      CHECK(r.image.recall_at.at(K) == oracle_image_recall(img, txt, l, K));
    }
  }
}

TEST_CASE("recall is monotone in K and reaches 1 at the corpus size") {
  const BatchLayout l{9, 2};
  const auto img = unit_rows(9, 4, 7);
  const auto txt = unit_rows(18, 4, 8);
  std::vector<std::size_t> ks(9);
  std::iota(ks.begin(), ks.end(), 1);
  const auto r = recall_at_k(img, txt, l, ks);
  for (std::size_t K = 2; K <= 9; ++K) {
    CHECK(r.text.recall_at.at(K) >= r.text.recall_at.at(K - 1));
    CHECK(r.image.recall_at.at(K) >= r.image.recall_at.at(K - 1));
  }
  CHECK(r.image.recall_at.at(9) == 1.0);
  const std::size_t all[] = {18};
  CHECK(text_retrieval(img, txt, l, all).recall_at.at(18) == 1.0);
}

TEST_CASE("invalid K and shapes are rejected") {
  const BatchLayout l{5, 2};
  const auto img = unit_rows(5, 3, 1);
  const auto txt = unit_rows(10, 3, 2);
  const std::size_t too_big[] = {6};
  const std::size_t zero[] = {0};
  CHECK_THROWS_AS(recall_at_k(img, txt, l, too_big), std::invalid_argument);
  CHECK_THROWS_AS(recall_at_k(img, txt, l, zero), std::invalid_argument);
  CHECK_THROWS_AS(image_retrieval(img, txt, l, too_big), std::invalid_argument);
  const std::size_t eleven[] = {11};
  CHECK_THROWS_AS(text_retrieval(img, txt, l, eleven), std::invalid_argument);
  const std::size_t one[] = {1};
  CHECK_THROWS_AS(recall_at_k(img, unit_rows(9, 3, 2), l, one), std::invalid_argument);
}

TEST_CASE("retrieval is invariant to a joint permutation of images") {
  const BatchLayout l{7, 2};
  const auto img = unit_rows(7, 6, 3);
  const auto txt = unit_rows(14, 6, 4);
  const std::vector<std::size_t> perm{3, 0, 6, 1, 5, 2, 4};
  MatrixD pimg(7, 6), ptxt(14, 6);
  for (std::size_t n = 0; n < 7; ++n) {
    std::copy(img.row(perm[n]).begin(), img.row(perm[n]).end(), pimg.row(n).begin());
    for (std::size_t j = 0; j < 2; ++j) {
      std::copy(txt.row(perm[n] * 2 + j).begin(), txt.row(perm[n] * 2 + j).end(),
                ptxt.row(n * 2 + j).begin());
    }
  }
  // Random continuous data has no ties, so tie-breaking cannot differ.
  std::vector<std::size_t> ks{1, 2, 3, 7};
  const auto a = recall_at_k(img, txt, l, ks);
  const auto b = recall_at_k(pimg, ptxt, l, ks);
  CHECK(a.text.recall_at == b.text.recall_at);
  CHECK(a.image.recall_at == b.image.recall_at);
}

TEST_CASE("float and double overloads agree") {
  const BatchLayout l{6, 2};
  const auto img = mpt::testing::unit_rows_f(6, 8, 5);
  const auto txt = mpt::testing::unit_rows_f(12, 8, 6);
  const std::size_t ks[] = {1, 3};
  const auto a = recall_at_k(img, txt, l, ks);
  const auto b = recall_at_k(widen(img), widen(txt), l, ks);
  CHECK(a.text.recall_at == b.text.recall_at);
  CHECK(a.image.recall_at == b.image.recall_at);
}

TEST_CASE("class prototypes") {
  SUBCASE("singleton classes give perfect accuracy") {
    const BatchLayout l{5, 2};
    const auto img = unit_rows(5, 8, 9);
    const auto txt = repeat_rows(img, 2);
    const std::vector<std::uint32_t> labels{0, 1, 2, 3, 4};
    const auto protos = class_text_prototypes(txt, l, labels, 5);
    CHECK(protos.rows() == 5);
    CHECK(prototype_accuracy(img, protos, labels) == 1.0);
  }
  SUBCASE("prototype is the normalized caption mean") {
    const BatchLayout l{2, 1};
    MatrixD txt(2, 2, 0.0);
    txt(0, 0) = 1;
    txt(1, 1) = 1;
    const std::vector<std::uint32_t> labels{0, 0};
    const auto p = class_text_prototypes(txt, l, labels, 2);
    CHECK(p(0, 0) == doctest::Approx(std::sqrt(0.5)));
    CHECK(p(0, 1) == doctest::Approx(std::sqrt(0.5)));
    CHECK(p(1, 0) == 0.0);  // empty class
    CHECK(p(1, 1) == 0.0);
  }
  SUBCASE("a single class is always right") {
    const BatchLayout l{4, 1};
    const std::vector<std::uint32_t> labels(4, 0);
    const auto img = unit_rows(4, 3, 1);
    const auto p = class_text_prototypes(unit_rows(4, 3, 2), l, labels, 1);
    CHECK(prototype_accuracy(img, p, labels) == 1.0);
  }
  SUBCASE("labels unrelated to the embeddings score near chance") {
    SynthConfig c;
    c.n_classes = 10;
    c.images_per_class = 60;
    c.k = 1;
    c.d_raw = 32;
    const auto ds = generate_synthetic(c, 3);
    auto labels = *ds.labels;
    Rng rng(4);
    for (auto& v : labels) v = static_cast<std::uint32_t>(rng.below(10));
    const auto p = class_text_prototypes(widen(ds.texts), ds.layout, labels, 10);
    const double acc = prototype_accuracy(widen(ds.images), p, labels);
    CHECK(std::abs(acc - 0.1) < 0.1);
    // With the true labels the same data separates cleanly.
    const auto pt = class_text_prototypes(widen(ds.texts), ds.layout, *ds.labels, 10);
    CHECK(prototype_accuracy(widen(ds.images), pt, *ds.labels) > 0.9);
  }
  SUBCASE("input errors") {
    const BatchLayout l{3, 1};
    const auto img = unit_rows(3, 3, 1);
    const std::vector<std::uint32_t> bad{0, 1, 3};
    CHECK_THROWS_AS(class_text_prototypes(img, l, bad, 3), std::invalid_argument);
    const auto p = unit_rows(2, 3, 2);
    CHECK_THROWS_AS(prototype_accuracy(img, p, std::vector<std::uint32_t>{0, 1, 2}),
                    std::invalid_argument);
    CHECK_THROWS_AS(prototype_accuracy(img, p, std::vector<std::uint32_t>{0, 1}),
                    std::invalid_argument);
    CHECK_THROWS_AS(prototype_accuracy(MatrixD(0, 3), p, std::vector<std::uint32_t>{}),
                    std::invalid_argument);
  }
}

TEST_CASE("ranking audit") {
  SUBCASE("identical captions rank first") {
    const BatchLayout l{6, 1};
    const auto img = unit_rows(6, 10, 1);
    const auto a = ranking_audit(img, repeat_rows(img, 1), l);
    for (std::size_t i = 0; i < 6; ++i) CHECK(a.rank(i, 0) == 1);
    CHECK(a.histogram[0] == 6);
  }
  SUBCASE("matches brute-force ranks and the histogram sums to n_txt") {
    const BatchLayout l{8, 3};
    const auto img = unit_rows(8, 5, 2);
    const auto txt = unit_rows(24, 5, 3);
    const auto a = ranking_audit(img, txt, l);
    REQUIRE(a.ranks.size() == 24);
    REQUIRE(a.histogram.size() == 24);
    CHECK(std::accumulate(a.histogram.begin(), a.histogram.end(), std::size_t{0}) == 24);
    for (std::size_t i = 0; i < 8; ++i) {
      std::vector<double> s(24);
      for (std::size_t c = 0; c < 24; ++c) s[c] = dot(img.row(i), txt.row(c));
      const auto order = ranking(s);
      for (std::size_t j = 0; j < 3; ++j) {
        const auto pos = std::find(order.begin(), order.end(), i * 3 + j) - order.begin();
        CHECK(a.rank(i, j) == std::size_t(pos) + 1);
      }
    }
  }
  SUBCASE("mislabeled captions rank below their image's other captions") {
    SynthConfig c;
    c.n_classes = 6;
    c.images_per_class = 10;
    c.k = 4;
    c.d_raw = 32;
    c.mislabel_fraction = 0.05;
    const auto r = generate_synthetic_traced(c, 5);
    const auto& ds = r.dataset;
    REQUIRE(!r.trace.mislabeled_captions.empty());
    const auto a = ranking_audit(ds.reference_images(), ds.texts, ds.layout);
    for (std::size_t cap : r.trace.mislabeled_captions) {
      CHECK(a.rank(cap / 4, cap % 4) > 1);
    }
  }
  SUBCASE("csv output") {
    const BatchLayout l{2, 1};
    MatrixD img(2, 2, 0.0);
    img(0, 0) = img(1, 1) = 1;
    const auto a = ranking_audit(img, img, l);
    CHECK(audit_csv(a) == "image,caption,rank\n0,0,1\n1,1,1\n");
    CHECK(histogram_csv(a) == "rank,count\n1,2\n");
  }
}

TEST_CASE("evaluate_model and its json") {
  SynthConfig c;
  c.n_classes = 3;
  c.images_per_class = 5;
  c.k = 2;
  c.d_raw = 8;
  const auto eval = generate_synthetic(c, 1);
  const auto model = TwoTowerModel::init({8, 0, 4}, 2);
  const std::size_t ks[] = {1, 5};
  const auto r = evaluate_model(model, eval, ks);
  REQUIRE(r.prototype_accuracy);
  CHECK(r.n_classes == 3);
  const auto j = to_json(r);
  CHECK(j["text_retrieval"]["recall"].contains("R@5"));
  CHECK(j["image_retrieval"]["n_queries"] == 30);
  CHECK(j["prototype_accuracy"] == *r.prototype_accuracy);
  auto unlabeled = eval;
  unlabeled.labels.reset();
  CHECK_FALSE(evaluate_model(model, unlabeled, ks).prototype_accuracy);
}

TEST_CASE("ablation configuration") {
  SynthConfig c;
  c.n_classes = 3;
  c.images_per_class = 4;
  c.k = 5;
  c.d_raw = 8;
  const auto ds = generate_synthetic(c, 1);
  TrainConfig base;
  base.batch_images = 4;
  CHECK(parse_ablation_axis("mask-terms") == AblationAxis::mask_terms);
  CHECK(parse_ablation_axis("p1") == AblationAxis::thresholds_p1);
  CHECK_THROWS_AS(parse_ablation_axis("depth"), std::invalid_argument);

  auto s = configure_ablation(ds, base, AblationAxis::num_captions, "2");
  CHECK(s.train.layout.k == 2);
  CHECK(s.train.texts.rows() == 24);
  CHECK_THROWS_AS(configure_ablation(ds, base, AblationAxis::num_captions, "6"),
                  std::invalid_argument);
  CHECK_THROWS_AS(configure_ablation(ds, base, AblationAxis::num_captions, "0"),
                  std::invalid_argument);
  s = configure_ablation(ds, base, AblationAxis::mask_terms, "none");
  CHECK(s.config.terms == MiningTerms::none());
  s = configure_ablation(ds, base, AblationAxis::thresholds_p1, "0.31");
  CHECK(s.config.thresholds.p1 == 0.31);
  CHECK_THROWS_AS(configure_ablation(ds, base, AblationAxis::thresholds_p1, "abc"),
                  std::invalid_argument);
  s = configure_ablation(ds, base, AblationAxis::loss_kind, "info-nce");
  CHECK(s.config.loss == LossKind::info_nce);
  CHECK(s.config.terms == MiningTerms::none());
  CHECK(s.config.caption_mode == CaptionMode::random_one_of_k);
  s = configure_ablation(ds, base, AblationAxis::caption_mode, "random-one");
  CHECK(s.config.caption_mode == CaptionMode::random_one_of_k);
}

TEST_CASE("ablation runs, summaries and outputs") {
  SynthConfig c;
  c.n_classes = 3;
  c.images_per_class = 6;
  c.k = 2;
  c.d_raw = 8;
  TrainConfig base;
  base.epochs = 1;
  base.batch_images = 6;
  base.d_out = 4;
  base.beta.grid_steps = 101;
  std::vector<AblationReplicate> reps;
  for (std::uint64_t s = 0; s < 2; ++s) {
    reps.push_back({generate_synthetic(c, s), generate_holdout(c, s, 3), 10 + s});
  }
  const std::vector<std::string> values{"all", "none"};
  const auto t = run_ablation(reps, base, AblationAxis::mask_terms, values);
  REQUIRE(t.rows.size() == 4);
  CHECK(t.rows[0].value == "all");
  CHECK(t.rows[1].seed == 11);
  const auto all = t.summary("all");
  CHECK(all.runs == 2);
  CHECK(all.prototype_accuracy ==
        doctest::Approx((t.rows[0].prototype_accuracy + t.rows[1].prototype_accuracy) / 2));
  CHECK_THROWS_AS(t.summary("it"), std::out_of_range);
  CHECK(t.summaries().size() == 2);

  const auto csv = ablation_csv(t);
  CHECK(csv.rfind("axis,value,seed,prototype_accuracy,text_r1,image_r1,final_loss\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  std::istringstream in(ablation_jsonl(t));
  std::string line;
  std::size_t summaries = 0, lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j["axis"] == "mask-terms");
    if (j.contains("summary")) ++summaries;
    ++lines;
  }
  CHECK(lines == 6);
  CHECK(summaries == 2);

  // Replaying one cell reproduces its row exactly.
  const std::vector<std::string> one{"none"};
  const std::vector<AblationReplicate> first{reps[0]};
  const auto again = run_ablation(first, base, AblationAxis::mask_terms, one);
  CHECK(again.rows[0].final_loss == t.rows[2].final_loss);
  CHECK(again.rows[0].prototype_accuracy == t.rows[2].prototype_accuracy);

  // Bad values fail before any training; so do unlabeled held-out sets.
  const std::vector<std::string> typo{"all", "bogus"};
  CHECK_THROWS_AS(run_ablation(reps, base, AblationAxis::mask_terms, typo),
                  std::invalid_argument);
  auto unlabeled = reps;
  unlabeled[0].eval.labels.reset();
  CHECK_THROWS_AS(run_ablation(unlabeled, base, AblationAxis::mask_terms, values),
                  std::invalid_argument);
}
