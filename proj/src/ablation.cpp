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

#include "mpt/ablation.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>
#include <stdexcept>

#include "mpt/evaluation.hpp"

namespace mpt {
namespace {

double parse_real(std::string_view text) {
  std::size_t used = 0;
  const std::string s(text);
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) {
    throw std::invalid_argument("ablation: '" + s + "' is not a number");
  }
  return v;
}

std::size_t parse_count(std::string_view text) {
  std::size_t v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || end != text.data() + text.size()) {
    throw std::invalid_argument("ablation: '" + std::string(text) +
                                "' is not a caption count");
  }
  return v;
}

}  // namespace

AblationAxis parse_ablation_axis(std::string_view name) {
  if (name == "mask-terms" || name == "mask_terms") return AblationAxis::mask_terms;
  if (name == "num-captions" || name == "num_captions") {
    return AblationAxis::num_captions;
  }
  if (name == "caption-mode" || name == "caption_mode") {
    return AblationAxis::caption_mode;
  }
  if (name == "p1" || name == "thresholds_p1") return AblationAxis::thresholds_p1;
  if (name == "loss" || name == "loss_kind") return AblationAxis::loss_kind;
  throw std::invalid_argument("unknown ablation axis '" + std::string(name) +
                              "' (expected mask-terms, num-captions, "
                              "caption-mode, p1 or loss)");
}

std::string_view to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::mask_terms: return "mask-terms";
    case AblationAxis::num_captions: return "num-captions";
    case AblationAxis::caption_mode: return "caption-mode";
    case AblationAxis::thresholds_p1: return "p1";
    case AblationAxis::loss_kind: return "loss";
  }
  return "?";
}

AblationSetting configure_ablation(const EmbeddingDataset& train,
                                   const TrainConfig& base, AblationAxis axis,
                                   std::string_view value) {
  AblationSetting s{base, train};
  switch (axis) {
    case AblationAxis::mask_terms:
      s.config.terms = MiningTerms::parse(value);
      break;
    case AblationAxis::num_captions: {
      const std::size_t k = parse_count(value);
      if (k == 0 || k > train.layout.k) {
        throw std::invalid_argument("ablation: caption count " + std::string(value) +
                                    " outside [1, " +
                                    std::to_string(train.layout.k) + "]");
      }
      if (k != train.layout.k) s.train = restrict_captions(train, k);
      break;
    }
    case AblationAxis::caption_mode:
      s.config.caption_mode = parse_caption_mode(value);
      break;
    case AblationAxis::thresholds_p1:
      s.config.thresholds.p1 = parse_real(value);
      break;
    case AblationAxis::loss_kind:
      s.config.loss = parse_loss_kind(value);
      if (s.config.loss == LossKind::info_nce) {
        s.config.terms = MiningTerms::none();
        if (s.train.layout.k != 1) {
          s.config.caption_mode = CaptionMode::random_one_of_k;
        }
      }
      break;
  }
  s.config.validate(s.train);
  return s;
}

std::vector<AblationSummary> AblationTable::summaries() const {
  std::vector<AblationSummary> out;
  for (const auto& row : rows) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const auto& s) { return s.value == row.value; });
    if (it == out.end()) {
      out.push_back({row.value});
      it = out.end() - 1;
    }
    ++it->runs;
    it->prototype_accuracy += row.prototype_accuracy;
    it->text_r1 += row.text_r1;
    it->image_r1 += row.image_r1;
  }
  for (auto& s : out) {
    const double n = static_cast<double>(s.runs);
    s.prototype_accuracy /= n;
    s.text_r1 /= n;
    s.image_r1 /= n;
  }
  return out;
}

AblationSummary AblationTable::summary(std::string_view value) const {
  for (auto& s : summaries()) {
    if (s.value == value) return s;
  }
  throw std::out_of_range("ablation: no rows for value '" + std::string(value) + "'");
}

AblationTable run_ablation(std::span<const AblationReplicate> replicates,
                           const TrainConfig& base, AblationAxis axis,
                           std::span<const std::string> values) {
  if (replicates.empty() || values.empty()) {
    throw std::invalid_argument("ablation: need at least one replicate and value");
  }
  for (const auto& rep : replicates) {
    if (!rep.eval.labels) {
      throw std::invalid_argument("ablation: held-out data must carry labels");
    }
  }
  // Validate every value up front so a typo fails before any training.
  for (const auto& v : values) {
    configure_ablation(replicates.front().train, base, axis, v);
  }

  AblationTable table;
  table.axis = axis;
  const std::size_t ks[] = {1};
  for (const auto& value : values) {
    for (const auto& rep : replicates) {
      AblationSetting s = configure_ablation(rep.train, base, axis, value);
      s.config.seed = rep.seed;
      const TrainResult trained = train(s.train, s.config);
      const EvaluationReport eval = evaluate_model(trained.model, rep.eval, ks);
      table.rows.push_back({value, rep.seed, eval.prototype_accuracy.value(),
                            eval.retrieval.text.recall_at.at(1),
                            eval.retrieval.image.recall_at.at(1),
                            trained.history.back().loss});
    }
  }
  return table;
}

std::string ablation_csv(const AblationTable& table) {
  std::ostringstream out;
  out.precision(17);
  out << "axis,value,seed,prototype_accuracy,text_r1,image_r1,final_loss\n";
  for (const auto& r : table.rows) {
    out << to_string(table.axis) << ',' << r.value << ',' << r.seed << ','
        << r.prototype_accuracy << ',' << r.text_r1 << ',' << r.image_r1 << ','
        << r.final_loss << '\n';
  }
  return out.str();
}

std::string ablation_jsonl(const AblationTable& table) {
  std::string out;
  for (const auto& r : table.rows) {
    out += nlohmann::json{{"axis", to_string(table.axis)},
                          {"value", r.value},
                          {"seed", r.seed},
                          {"prototype_accuracy", r.prototype_accuracy},
                          {"text_r1", r.text_r1},
                          {"image_r1", r.image_r1},
                          {"final_loss", r.final_loss}}
               .dump();
    out += '\n';
  }
  for (const auto& s : table.summaries()) {
    out += nlohmann::json{{"axis", to_string(table.axis)},
                          {"value", s.value},
                          {"summary", true},
                          {"runs", s.runs},
                          {"prototype_accuracy", s.prototype_accuracy},
                          {"text_r1", s.text_r1},
                          {"image_r1", s.image_r1}}
               .dump();
    out += '\n';
  }
  return out;
}

}  // namespace mpt
