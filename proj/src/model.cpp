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

#include "mpt/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "binary_io.hpp"
#include "mpt/rng.hpp"

namespace mpt {
namespace {

// Norms below this are treated as this value so a degenerate output cannot
// produce a division by zero.
constexpr double kMinNorm = 1e-12;

// out = x w + b (row vector bias).
MatrixD affine(const MatrixD& x, const MatrixD& w, const std::vector<double>& b) {
  if (x.cols() != w.rows()) {
    throw std::invalid_argument("tower input dim " + std::to_string(x.cols()) +
                                " != weight rows " + std::to_string(w.rows()));
  }
  MatrixD out(x.rows(), w.cols());
  parallel_rows(x.rows(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      auto o = out.row(i);
      for (std::size_t j = 0; j < o.size(); ++j) o[j] = b[j];
      auto xr = x.row(i);
      for (std::size_t t = 0; t < xr.size(); ++t) {
        const double v = xr[t];
        auto wr = w.row(t);
        for (std::size_t j = 0; j < o.size(); ++j) o[j] += v * wr[j];
      }
    }
  });
  return out;
}

// grad_w += x^T g, grad_b += column sums of g.
void accumulate_affine(const MatrixD& x, const MatrixD& g, MatrixD& grad_w,
                       std::vector<double>& grad_b) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xr = x.row(i);
    auto gr = g.row(i);
    for (std::size_t t = 0; t < xr.size(); ++t) {
      auto wr = grad_w.row(t);
      const double v = xr[t];
      for (std::size_t j = 0; j < gr.size(); ++j) wr[j] += v * gr[j];
    }
    for (std::size_t j = 0; j < gr.size(); ++j) grad_b[j] += gr[j];
  }
}

// g w^T
MatrixD multiply_by_transpose(const MatrixD& g, const MatrixD& w) {
  MatrixD out(g.rows(), w.rows());
  for (std::size_t i = 0; i < g.rows(); ++i) {
    auto gr = g.row(i);
    for (std::size_t t = 0; t < w.rows(); ++t) {
      auto wr = w.row(t);
      double s = 0.0;
      for (std::size_t j = 0; j < gr.size(); ++j) s += gr[j] * wr[j];
      out(i, t) = s;
    }
  }
  return out;
}

MatrixD gaussian(std::size_t rows, std::size_t cols, double std_dev, Rng& rng) {
  MatrixD m(rows, cols);
  for (double& v : m.data()) v = std_dev * rng.normal();
  return m;
}

Tower init_tower(const TowerShape& s, Rng& rng) {
  Tower t;
  const std::size_t first_out = s.d_hidden > 0 ? s.d_hidden : s.d_out;
  t.w1 = gaussian(s.d_in, first_out, 1.0 / std::sqrt(double(s.d_in)), rng);
  t.b1.assign(first_out, 0.0);
  if (s.d_hidden > 0) {
    t.w2 = gaussian(s.d_hidden, s.d_out, 1.0 / std::sqrt(double(s.d_hidden)), rng);
    t.b2.assign(s.d_out, 0.0);
  }
  return t;
}

Tower zero_tower(const TowerShape& s) {
  Tower t;
  const std::size_t first_out = s.d_hidden > 0 ? s.d_hidden : s.d_out;
  t.w1 = MatrixD(s.d_in, first_out);
  t.b1.assign(first_out, 0.0);
  if (s.d_hidden > 0) {
    t.w2 = MatrixD(s.d_hidden, s.d_out);
    t.b2.assign(s.d_out, 0.0);
  }
  return t;
}

void tower_blocks(Tower& t, const char* w1, const char* b1, const char* w2,
                  const char* b2, std::vector<NamedBlock>& out) {
  out.push_back({w1, t.w1.data(), true});
  out.push_back({b1, t.b1, true});
  if (t.has_hidden()) {
    out.push_back({w2, t.w2.data(), true});
    out.push_back({b2, t.b2, true});
  }
}

}  // namespace

TowerShape Tower::shape() const {
  return {w1.rows(), has_hidden() ? w1.cols() : 0,
          has_hidden() ? w2.cols() : w1.cols()};
}

TwoTowerModel TwoTowerModel::init(const TowerShape& shape, std::uint64_t seed,
                                  LossParams loss_params) {
  if (shape.d_in == 0 || shape.d_out == 0) {
    throw std::invalid_argument("tower dimensions must be >= 1");
  }
  Rng rng(seed);
  TwoTowerModel m;
  m.image = init_tower(shape, rng);
  m.text = init_tower(shape, rng);
  m.loss_params = loss_params;
  return m;
}

TwoTowerModel TwoTowerModel::zeros_like(const TwoTowerModel& m) {
  return {zero_tower(m.image.shape()), zero_tower(m.text.shape()),
          LossParams{0.0, 0.0}};
}

std::size_t TwoTowerModel::parameter_count() const {
  std::size_t n = 2;
  for (const Tower* t : {&image, &text}) {
    n += t->w1.size() + t->b1.size() + t->w2.size() + t->b2.size();
  }
  return n;
}

std::vector<NamedBlock> parameter_blocks(TwoTowerModel& m) {
  std::vector<NamedBlock> out;
  tower_blocks(m.image, "image.w1", "image.b1", "image.w2", "image.b2", out);
  tower_blocks(m.text, "text.w1", "text.b1", "text.w2", "text.b2", out);
  out.push_back({"log_tau", {&m.loss_params.log_tau, 1}, false});
  out.push_back({"beta", {&m.loss_params.beta, 1}, false});
  return out;
}

std::vector<ParamSlot> optimizer_slots(TwoTowerModel& params,
                                       TwoTowerModel& grads) {
  auto p = parameter_blocks(params);
  auto g = parameter_blocks(grads);
  if (p.size() != g.size()) {
    throw std::invalid_argument("gradient model shape differs from parameters");
  }
  std::vector<ParamSlot> slots;
  for (std::size_t b = 0; b < p.size(); ++b) {
    slots.push_back({p[b].values, g[b].values, p[b].decay});
  }
  return slots;
}

MatrixD encode(const Tower& tower, const MatrixD& input, TowerCache* cache) {
  MatrixD out;
  MatrixD hidden;
  if (tower.has_hidden()) {
    hidden = affine(input, tower.w1, tower.b1);
    for (double& v : hidden.data()) v = std::tanh(v);
    out = affine(hidden, tower.w2, tower.b2);
  } else {
    out = affine(input, tower.w1, tower.b1);
  }
  MatrixD normalized(out.rows(), out.cols());
  std::vector<double> norms(out.rows());
  for (std::size_t i = 0; i < out.rows(); ++i) {
    double sq = 0.0;
    for (double v : out.row(i)) sq += v * v;
    norms[i] = std::max(std::sqrt(sq), kMinNorm);
    auto dst = normalized.row(i);
    auto src = out.row(i);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = src[j] / norms[i];
  }
  if (cache != nullptr) {
    cache->input = input;
    cache->hidden = std::move(hidden);
    cache->output = std::move(out);
    cache->norms = std::move(norms);
    cache->normalized = normalized;
  }
  return normalized;
}

MatrixD encode(const Tower& tower, const EmbeddingMatrix& input,
               TowerCache* cache) {
  return encode(tower, widen(input), cache);
}

void backward(const Tower& tower, const TowerCache& cache,
              const MatrixD& grad_normalized, Tower& grads) {
  const MatrixD& e = cache.normalized;
  if (!grad_normalized.same_shape(e)) {
    throw std::invalid_argument("backward: gradient shape mismatch");
  }
  // Through y / |y|: dy = (de - e (e . de)) / |y|.
  MatrixD grad_out(e.rows(), e.cols());
  for (std::size_t i = 0; i < e.rows(); ++i) {
    auto er = e.row(i);
    auto gr = grad_normalized.row(i);
    double proj = 0.0;
    for (std::size_t j = 0; j < er.size(); ++j) proj += er[j] * gr[j];
    auto dst = grad_out.row(i);
    for (std::size_t j = 0; j < er.size(); ++j) {
      dst[j] = (gr[j] - er[j] * proj) / cache.norms[i];
    }
  }
  if (tower.has_hidden()) {
    accumulate_affine(cache.hidden, grad_out, grads.w2, grads.b2);
    MatrixD grad_hidden = multiply_by_transpose(grad_out, tower.w2);
    for (std::size_t n = 0; n < grad_hidden.size(); ++n) {
      const double h = cache.hidden.data()[n];
      grad_hidden.data()[n] *= 1.0 - h * h;
    }
    accumulate_affine(cache.input, grad_hidden, grads.w1, grads.b1);
  } else {
    accumulate_affine(cache.input, grad_out, grads.w1, grads.b1);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

std::vector<std::uint8_t> encode_checkpoint(const TwoTowerModel& m) {
  const TowerShape s = m.shape();
  if (!(m.text.shape() == s)) {
    throw std::invalid_argument("checkpoint: towers have different shapes");
  }
  detail::ByteWriter w;
  w.magic("FFW1");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(s.d_in));
  w.u32(static_cast<std::uint32_t>(s.d_hidden));
  w.u32(static_cast<std::uint32_t>(s.d_out));
  TwoTowerModel copy = m;
  for (const auto& block : parameter_blocks(copy)) {
    for (double v : block.values) w.f32(static_cast<float>(v));
  }
  return w.take();
}

TwoTowerModel decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic("FFW1");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("version", "unsupported checkpoint version " +
                                     std::to_string(version));
  }
  TowerShape s;
  s.d_in = r.u32("d_in");
  s.d_hidden = r.u32("d_hidden");
  s.d_out = r.u32("d_out");
  if (s.d_in == 0 || s.d_out == 0) {
    throw FormatError("shape", "tower dimensions must be >= 1");
  }
  TwoTowerModel m;
  m.image = zero_tower(s);
  m.text = zero_tower(s);
  r.need(m.parameter_count() * 4, "payload");
  for (auto& block : parameter_blocks(m)) {
    for (double& v : block.values) v = r.f32("payload");
  }
  if (r.remaining() != 0) throw FormatError("payload", "trailing bytes");
  return m;
}

void write_checkpoint(const TwoTowerModel& m, const std::filesystem::path& path) {
  detail::write_file(path, encode_checkpoint(m));
}

TwoTowerModel read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path));
}

}  // namespace mpt
