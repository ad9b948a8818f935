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

#include "mpt/mining.hpp"

#include <algorithm>
#include <stdexcept>

#include "binary_io.hpp"

namespace mpt {

void MiningThresholds::validate() const {
  for (double p : {p1, p1_prime, p2, p3}) {
    if (!(p > -1.0 && p <= 1.0)) {
      throw std::invalid_argument("mining thresholds must lie in (-1, 1]");
    }
  }
  if (!(p1_prime < p1)) {
    throw std::invalid_argument("mining thresholds: p1' (" +
                                std::to_string(p1_prime) +
                                ") must be < p1 (" + std::to_string(p1) + ")");
  }
}

MiningTerms MiningTerms::parse(std::string_view text) {
  if (text == "all") return all();
  if (text == "none" || text.empty()) return none();
  MiningTerms t = none();
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find_first_of("+,", pos), text.size());
    const auto tok = text.substr(pos, end - pos);
    if (tok == "it") {
      t.it = true;
    } else if (tok == "ii") {
      t.ii = true;
    } else if (tok == "tt") {
      t.tt = true;
    } else {
      throw std::invalid_argument("unknown mining term '" + std::string(tok) +
                                  "' (expected it, ii, tt, all or none)");
    }
    pos = end + 1;
  }
  return t;
}

std::string MiningTerms::to_string() const {
  if (empty()) return "none";
  if (it && ii && tt) return "all";
  std::string s;
  auto add = [&s](const char* name) {
    if (!s.empty()) s += '+';
    s += name;
  };
  if (it) add("it");
  if (ii) add("ii");
  if (tt) add("tt");
  return s;
}

std::size_t AssignmentMatrix::positives() const {
  return static_cast<std::size_t>(
      std::ranges::count_if(entries.data(), [](std::int8_t v) { return v > 0; }));
}

AssignmentMatrix block_diagonal_assignment(const BatchLayout& layout) {
  layout.validate();
  AssignmentMatrix m{Matrix<std::int8_t>(layout.n_img, layout.n_txt(), -1),
                     layout};
  for (std::size_t i = 0; i < layout.n_img; ++i) {
    for (std::size_t t = 0; t < layout.k; ++t) m.entries(i, i * layout.k + t) = 1;
  }
  return m;
}

MatrixD expand_image_similarity(const MatrixD& s_ii, const BatchLayout& layout) {
  layout.validate();
  if (s_ii.rows() != layout.n_img || s_ii.cols() != layout.n_img) {
    throw std::invalid_argument("expand_image_similarity: s_ii must be n_img x "
                                "n_img (" + std::to_string(layout.n_img) + ")");
  }
  MatrixD out(layout.n_img, layout.n_txt());
  for (std::size_t i = 0; i < layout.n_img; ++i) {
    for (std::size_t c = 0; c < layout.n_txt(); ++c) {
      out(i, c) = s_ii(i, c / layout.k);
    }
  }
  return out;
}

MatrixD expand_text_similarity(const MatrixD& s_tt, const BatchLayout& layout) {
  layout.validate();
  const std::size_t n_txt = layout.n_txt();
  if (s_tt.rows() != n_txt || s_tt.cols() != n_txt) {
    throw std::invalid_argument("expand_text_similarity: s_tt must be n_txt x "
                                "n_txt (" + std::to_string(n_txt) + ")");
  }
  const std::size_t k = layout.k;
  MatrixD out(layout.n_img, n_txt);
  for (std::size_t i = 0; i < layout.n_img; ++i) {
    for (std::size_t c = 0; c < n_txt; ++c) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += s_tt(i * k + t, c);
      out(i, c) = s / static_cast<double>(k);
    }
  }
  return out;
}

SimilarityTriple expand_triple(const SimilarityTriple& triple,
                               const BatchLayout& layout) {
  if (triple.expanded) {
    throw std::invalid_argument("expand_triple: triple is already expanded");
  }
  if (triple.s_it.rows() != layout.n_img || triple.s_it.cols() != layout.n_txt()) {
    throw std::invalid_argument("expand_triple: s_it shape does not match layout");
  }
  return {triple.s_it, expand_image_similarity(triple.s_ii, layout),
          expand_text_similarity(triple.s_tt, layout), true};
}

AssignmentMatrix build_assignment(const SimilarityTriple& triple,
                                  const MiningThresholds& thresholds,
                                  const BatchLayout& layout, MiningTerms terms) {
  if (!triple.expanded) {
    throw std::invalid_argument("build_assignment: similarity triple must be "
                                "expanded to n_img x n_txt first");
  }
  thresholds.validate();
  const std::size_t n_img = layout.n_img;
  const std::size_t n_txt = layout.n_txt();
  for (const MatrixD* m : {&triple.s_it, &triple.s_ii, &triple.s_tt}) {
    if (m->rows() != n_img || m->cols() != n_txt) {
      throw std::invalid_argument("build_assignment: matrices must be " +
                                  std::to_string(n_img) + "x" +
                                  std::to_string(n_txt));
    }
  }
  AssignmentMatrix out = block_diagonal_assignment(layout);
  if (terms.empty()) return out;
  parallel_rows(n_img, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t c = 0; c < n_txt; ++c) {
        const double it = triple.s_it(i, c);
        const bool pos = (terms.it && it > thresholds.p1) ||
                         (terms.ii && triple.s_ii(i, c) > thresholds.p2) ||
                         (terms.tt && triple.s_tt(i, c) > thresholds.p3 &&
                          it > thresholds.p1_prime);
        if (pos) out.entries(i, c) = 1;
      }
    }
  });
  return out;
}

AssignmentMatrix mine_normalized(const MatrixD& images, const MatrixD& texts,
                                 const BatchLayout& layout,
                                 const MiningThresholds& thresholds,
                                 MiningTerms terms) {
  if (images.rows() != layout.n_img || texts.rows() != layout.n_txt()) {
    throw std::invalid_argument("mine: embedding rows do not match layout");
  }
  if (terms.empty()) return block_diagonal_assignment(layout);
  const auto triple = expand_triple(similarity_triple(images, texts), layout);
  return build_assignment(triple, thresholds, layout, terms);
}

AssignmentMatrix mine_batch(const EmbeddingMatrix& clean_images,
                            const EmbeddingMatrix& texts,
                            const BatchLayout& layout,
                            const MiningThresholds& thresholds,
                            MiningTerms terms) {
  if (clean_images.rows() != layout.n_img || texts.rows() != layout.n_txt()) {
    throw std::invalid_argument("mine_batch: embedding rows do not match layout");
  }
  const auto images = l2_normalize(clean_images).matrix;
  const auto captions = l2_normalize(texts).matrix;
  const auto triple =
      expand_triple(similarity_triple(images, captions), layout);
  return build_assignment(triple, thresholds, layout, terms);
}

std::vector<std::uint8_t> encode_mask(const AssignmentMatrix& mask) {
  const std::size_t n = mask.entries.size();
  detail::ByteWriter w;
  w.magic("FFM1");
  w.u64(mask.entries.rows());
  w.u64(mask.entries.cols());
  std::vector<std::uint8_t> bits((n + 7) / 8, 0);
  for (std::size_t e = 0; e < n; ++e) {
    if (mask.entries.data()[e] > 0) {
      bits[e / 8] |= static_cast<std::uint8_t>(1u << (e % 8));
    }
  }
  w.raw(bits);
  return w.take();
}

AssignmentMatrix decode_mask(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic("FFM1");
  const std::size_t n_img = r.u64("n_img");
  const std::size_t n_txt = r.u64("n_txt");
  if (n_img == 0 || n_txt == 0 || n_txt % n_img != 0) {
    throw FormatError("n_txt", "must be a positive multiple of n_img");
  }
  const std::size_t n = n_img * n_txt;
  if (n / n_img != n_txt) throw FormatError("n_txt", "overflow");
  const auto bits = r.raw((n + 7) / 8, "bitmask");
  if (r.remaining() != 0) throw FormatError("bitmask", "trailing bytes");
  AssignmentMatrix m{Matrix<std::int8_t>(n_img, n_txt, -1),
                     BatchLayout{n_img, n_txt / n_img}};
  for (std::size_t e = 0; e < n; ++e) {
    if (bits[e / 8] & (1u << (e % 8))) m.entries.data()[e] = 1;
  }
  return m;
}

void write_mask(const AssignmentMatrix& mask, const std::filesystem::path& path) {
  detail::write_file(path, encode_mask(mask));
}

AssignmentMatrix read_mask(const std::filesystem::path& path) {
  return decode_mask(detail::read_file(path));
}

}  // namespace mpt
