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

// Command-line entry point: gen-synth, mine, estimate-beta, train, eval and
// ablate. Exit status 2 for usage errors, 1 for runtime failures.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mpt/ablation.hpp"
#include "mpt/dataset.hpp"
#include "mpt/evaluation.hpp"
#include "mpt/matrix.hpp"
#include "mpt/mining.hpp"
#include "mpt/model.hpp"
#include "mpt/trainer.hpp"

namespace {

using nlohmann::json;

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Options {
  std::size_t workers = 1;

  // gen-synth
  mpt::SynthConfig synth;
  std::size_t holdout_per_class = 0;
  bool overwrite = false;

  // shared
  std::string data;
  std::string out;
  std::uint64_t seed = 0;

  // mining and training
  mpt::TrainConfig train;
  std::string terms = "all";
  std::string captions = "joint";
  std::string loss = "sigmoid-mp";
  std::string optimizer = "adamw";
  std::string mining_reference = "frozen";
  std::string normalization = "per-text";
  std::string beta_grid = "-20:5:2501";
  bool no_refine = false;
  std::size_t k = 0;
  std::string history;

  // eval
  std::string model;
  std::string ks = "1,5,10";
  std::string audit;

  // ablate
  std::string eval_data;
  std::string axis = "mask-terms";
  std::string values = "all,none";
  std::size_t repeats = 1;
  std::string jsonl;
};

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void parse_beta_grid(const std::string& text, mpt::BetaEstimationConfig& cfg) {
  const auto parts = split(text, ':');
  if (parts.size() != 3) {
    throw UsageError("--beta-grid expects min:max:steps, got '" + text + "'");
  }
  try {
    cfg.grid_min = std::stod(parts[0]);
    cfg.grid_max = std::stod(parts[1]);
    cfg.grid_steps = std::stoul(parts[2]);
  } catch (const std::exception&) {
    throw UsageError("--beta-grid expects min:max:steps, got '" + text + "'");
  }
}

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  for (const auto& item : split(text, ',')) {
    try {
      ks.push_back(std::stoul(item));
    } catch (const std::exception&) {
      throw UsageError("--ks expects a comma list of counts, got '" + text + "'");
    }
  }
  return ks;
}

// Resolves the string-valued training flags into opt.train.
void resolve_train(Options& opt) {
  auto& c = opt.train;
  c.seed = opt.seed;
  c.terms = mpt::MiningTerms::parse(opt.terms);
  c.caption_mode = mpt::parse_caption_mode(opt.captions);
  c.loss = mpt::parse_loss_kind(opt.loss);
  c.optimizer.kind = mpt::parse_optimizer_kind(opt.optimizer);
  c.mining_reference = mpt::parse_mining_reference(opt.mining_reference);
  if (opt.normalization == "per-text") {
    c.normalization = mpt::LossNormalization::per_text;
  } else if (opt.normalization == "per-entry") {
    c.normalization = mpt::LossNormalization::per_entry;
  } else {
    throw UsageError("--norm expects per-text or per-entry");
  }
  parse_beta_grid(opt.beta_grid, c.beta);
  c.beta.refine = !opt.no_refine;
}

mpt::EmbeddingDataset load_training_data(const Options& opt) {
  mpt::EmbeddingDataset ds = mpt::read_dataset(opt.data);
  if (opt.k != 0 && opt.k != ds.layout.k) {
    if (opt.k > ds.layout.k) {
      throw UsageError("--k " + std::to_string(opt.k) + " exceeds the dataset's " +
                       std::to_string(ds.layout.k) + " captions per image");
    }
    ds = mpt::restrict_captions(ds, opt.k);
  }
  return ds;
}

void log_config(const std::string& command, const json& config) {
  std::cerr << json{{"command", command}, {"config", config}}.dump() << '\n';
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

json thresholds_json(const mpt::MiningThresholds& t) {
  return {{"p1", t.p1}, {"p1_prime", t.p1_prime}, {"p2", t.p2}, {"p3", t.p3}};
}

void add_threshold_flags(CLI::App* cmd, Options& opt) {
  cmd->add_option("--p1", opt.train.thresholds.p1, "image-text threshold");
  cmd->add_option("--p1p", opt.train.thresholds.p1_prime,
                  "image-text veto for text-text matches");
  cmd->add_option("--p2", opt.train.thresholds.p2, "image-image threshold");
  cmd->add_option("--p3", opt.train.thresholds.p3, "text-text threshold");
  cmd->add_option("--terms", opt.terms,
                  "enabled mining terms: all, none or a list like it+ii");
}

void add_train_flags(CLI::App* cmd, Options& opt) {
  add_threshold_flags(cmd, opt);
  cmd->add_option("--data", opt.data, "training dataset stem")->required();
  cmd->add_option("--seed", opt.seed, "random seed");
  cmd->add_option("--k", opt.k, "captions per image to keep (0 = all)");
  cmd->add_option("--loss", opt.loss, "sigmoid-mp, sup-con or info-nce");
  cmd->add_option("--captions", opt.captions, "joint or random-one");
  cmd->add_option("--mining-ref", opt.mining_reference, "frozen or online");
  cmd->add_option("--norm", opt.normalization, "per-text or per-entry");
  cmd->add_option("--epochs", opt.train.epochs, "training epochs");
  cmd->add_option("--batch", opt.train.batch_images, "images per batch");
  cmd->add_option("--optimizer", opt.optimizer, "adamw or sgd");
  cmd->add_option("--lr", opt.train.optimizer.learning_rate, "learning rate");
  cmd->add_option("--wd", opt.train.optimizer.weight_decay, "weight decay");
  cmd->add_flag("--cosine-lr", opt.train.cosine_lr, "cosine learning-rate decay");
  cmd->add_option("--d-out", opt.train.d_out, "projection dimension");
  cmd->add_option("--d-hidden", opt.train.d_hidden, "hidden width (0 = linear)");
  cmd->add_option("--tau-init", opt.train.tau_init, "initial temperature");
  cmd->add_option("--beta-grid", opt.beta_grid, "beta search grid min:max:steps");
  cmd->add_option("--beta-batches", opt.train.beta.num_batches,
                  "batches averaged by the beta search");
  cmd->add_flag("--no-refine", opt.no_refine, "skip refinement of the beta grid minimum");
}

int run_gen_synth(Options& opt) {
  log_config("gen-synth", {{"synth", mpt::to_json(opt.synth)},
                           {"seed", opt.seed},
                           {"holdout_per_class", opt.holdout_per_class},
                           {"out", opt.out}});
  mpt::WriteOptions wo;
  wo.overwrite = opt.overwrite;
  wo.manifest_extra = {{"generator", mpt::to_json(opt.synth)}, {"seed", opt.seed}};
  const auto ds = mpt::generate_synthetic(opt.synth, opt.seed);
  mpt::write_dataset(ds, opt.out, wo);
  json summary = {{"out", opt.out},
                  {"n_img", ds.layout.n_img},
                  {"n_txt", ds.layout.n_txt()},
                  {"planted", ds.planted ? ds.planted->size() : 0}};
  if (opt.holdout_per_class > 0) {
    const auto eval = mpt::generate_holdout(opt.synth, opt.seed, opt.holdout_per_class);
    wo.manifest_extra["holdout_per_class"] = opt.holdout_per_class;
    mpt::write_dataset(eval, opt.out + "_eval", wo);
    summary["eval"] = opt.out + "_eval";
  }
  std::cout << summary.dump() << '\n';
  return 0;
}

int run_mine(Options& opt) {
  resolve_train(opt);
  const auto& thr = opt.train.thresholds;
  thr.validate();
  log_config("mine", {{"data", opt.data},
                      {"thresholds", thresholds_json(thr)},
                      {"terms", opt.train.terms.to_string()},
                      {"out", opt.out}});
  const auto ds = mpt::read_dataset(opt.data);
  const auto mask = mpt::mine_batch(ds.reference_images(), ds.texts, ds.layout, thr,
                                    opt.train.terms);
  mpt::write_mask(mask, opt.out);
  std::cout << json{{"out", opt.out},
                    {"n_img", ds.layout.n_img},
                    {"n_txt", ds.layout.n_txt()},
                    {"positives", mask.positives()},
                    {"ground_truth", ds.layout.n_txt()}}
                   .dump()
            << '\n';
  return 0;
}

int run_estimate_beta(Options& opt) {
  resolve_train(opt);
  const auto ds = load_training_data(opt);
  opt.train.validate(ds);
  log_config("estimate-beta", {{"data", opt.data}, {"train", mpt::to_json(opt.train)}});
  const auto model = mpt::initial_model(ds, opt.train);
  const auto est = mpt::initial_beta(model, ds, opt.train);
  std::cout << json{{"beta", est.beta},
                    {"loss", est.loss},
                    {"grid_index", est.grid_index},
                    {"saturated", est.saturated},
                    {"tau", opt.train.tau_init}}
                   .dump()
            << '\n';
  if (est.saturated) {
    std::cerr << "warning: beta minimum lies on the grid boundary; widen --beta-grid\n";
  }
  return 0;
}

int run_train(Options& opt) {
  resolve_train(opt);
  const auto ds = load_training_data(opt);
  log_config("train", {{"data", opt.data},
                       {"out", opt.out},
                       {"history", opt.history},
                       {"workers", mpt::workers()},
                       {"train", mpt::to_json(opt.train)}});
  const auto result = mpt::train(ds, opt.train);
  mpt::write_checkpoint(result.model, opt.out);
  if (!opt.history.empty()) mpt::write_history(result.history, opt.history);
  json summary = {{"out", opt.out},
                  {"steps", result.history.size()},
                  {"final_loss", result.history.back().loss},
                  {"tau", result.model.loss_params.tau()},
                  {"beta", result.model.loss_params.beta}};
  if (result.beta_init) {
    summary["beta_init"] = result.beta_init->beta;
    summary["beta_init_saturated"] = result.beta_init->saturated;
  }
  std::cout << summary.dump() << '\n';
  return 0;
}

int run_eval(Options& opt) {
  const auto ks = parse_ks(opt.ks);
  log_config("eval", {{"model", opt.model}, {"data", opt.data}, {"ks", ks},
                      {"audit", opt.audit}});
  const auto model = mpt::read_checkpoint(opt.model);
  const auto ds = mpt::read_dataset(opt.data);
  const auto report = mpt::evaluate_model(model, ds, ks);
  if (!opt.audit.empty()) {
    const auto audit =
        mpt::ranking_audit(mpt::encode(model.image, ds.reference_images()),
                           mpt::encode(model.text, ds.texts), ds.layout);
    write_text(opt.audit, mpt::audit_csv(audit));
  }
  const std::string text = mpt::to_json(report).dump();
  if (opt.out.empty()) {
    std::cout << text << '\n';
  } else {
    write_text(opt.out, text + "\n");
  }
  return 0;
}

int run_ablate(Options& opt) {
  resolve_train(opt);
  const auto axis = mpt::parse_ablation_axis(opt.axis);
  const auto values = split(opt.values, ',');
  if (values.empty()) throw UsageError("--values is empty");
  if (opt.repeats == 0) throw UsageError("--repeats must be >= 1");
  log_config("ablate", {{"data", opt.data},
                        {"eval", opt.eval_data},
                        {"axis", mpt::to_string(axis)},
                        {"values", values},
                        {"repeats", opt.repeats},
                        {"train", mpt::to_json(opt.train)}});
  const auto train = load_training_data(opt);
  const auto eval = mpt::read_dataset(opt.eval_data);
  std::vector<mpt::AblationReplicate> reps;
  for (std::size_t r = 0; r < opt.repeats; ++r) {
    reps.push_back({train, eval, opt.seed + r});
  }
  const auto table = mpt::run_ablation(reps, opt.train, axis, values);
  const std::string csv = mpt::ablation_csv(table);
  if (opt.out.empty()) {
    std::cout << csv;
  } else {
    write_text(opt.out, csv);
  }
  if (!opt.jsonl.empty()) write_text(opt.jsonl, mpt::ablation_jsonl(table));
  for (const auto& s : table.summaries()) {
    std::cerr << mpt::to_string(axis) << '=' << s.value << " runs=" << s.runs
              << " prototype_accuracy=" << s.prototype_accuracy
              << " text_r1=" << s.text_r1 << " image_r1=" << s.image_r1 << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  CLI::App app{"Multi-positive contrastive training on precomputed embeddings", "mpt"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--workers", opt.workers, "worker threads")
      ->envname("MPT_WORKERS")
      ->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic dataset");
  gen->add_option("--classes", opt.synth.n_classes, "number of classes");
  gen->add_option("--per-class", opt.synth.images_per_class, "images per class");
  gen->add_option("--k", opt.synth.k, "captions per image");
  gen->add_option("--dim", opt.synth.d_raw, "embedding dimension");
  gen->add_option("--image-noise", opt.synth.image_noise_std,
                  "per-coordinate image noise");
  gen->add_option("--caption-noise", opt.synth.caption_noise_std,
                  "per-coordinate caption noise");
  gen->add_option("--aug-noise", opt.synth.image_aug_noise_std,
                  "augmentation noise of the training view");
  gen->add_option("--dup-frac", opt.synth.duplicate_fraction,
                  "fraction of images that are near-duplicates");
  gen->add_option("--mislabel-frac", opt.synth.mislabel_fraction,
                  "fraction of captions drawn from a wrong class");
  gen->add_option("--cross-margin", opt.synth.cross_margin,
                  "cosine above which a mislabeled caption is planted for a foreign image");
  gen->add_option("--dup-radius", opt.synth.duplicate_radius,
                  "perturbation radius of duplicates");
  gen->add_option("--holdout-per-class", opt.holdout_per_class,
                  "also write <out>_eval with this many images per class");
  gen->add_option("--seed", opt.seed, "random seed");
  gen->add_option("--out", opt.out, "output stem")->required();
  gen->add_flag("--overwrite", opt.overwrite, "replace existing files");

  auto* mine = app.add_subcommand("mine", "mine a positive mask over a dataset");
  mine->add_option("--data", opt.data, "dataset stem")->required();
  add_threshold_flags(mine, opt);
  mine->add_option("--out", opt.out, "mask file")->required();

  auto* beta = app.add_subcommand("estimate-beta", "search the initial loss bias");
  add_train_flags(beta, opt);

  opt.out = "";
  auto* train = app.add_subcommand("train", "train the projection towers");
  add_train_flags(train, opt);
  train->add_option("--out", opt.out, "checkpoint path")->default_str("model.ffw");
  train->add_option("--history", opt.history, "per-step history (JSON lines)");

  auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset");
  eval->add_option("--model", opt.model, "checkpoint path")->required();
  eval->add_option("--data", opt.data, "dataset stem")->required();
  eval->add_option("--ks", opt.ks, "recall cutoffs");
  eval->add_option("--audit", opt.audit, "write ground-truth caption ranks as CSV");
  eval->add_option("--out", opt.out, "report path (default stdout)");

  auto* ablate = app.add_subcommand("ablate", "sweep one training setting");
  add_train_flags(ablate, opt);
  ablate->add_option("--eval", opt.eval_data, "held-out dataset stem")->required();
  ablate->add_option("--axis", opt.axis,
                     "mask-terms, num-captions, caption-mode, p1 or loss");
  ablate->add_option("--values", opt.values, "comma-separated axis values");
  ablate->add_option("--repeats", opt.repeats,
                     "training seeds seed, seed+1, ... averaged per value");
  ablate->add_option("--out", opt.out, "CSV path (default stdout)");
  ablate->add_option("--jsonl", opt.jsonl, "also write rows and means as JSON lines");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    mpt::set_workers(opt.workers);
    if (*gen) return run_gen_synth(opt);
    if (*mine) return run_mine(opt);
    if (*beta) return run_estimate_beta(opt);
    if (*train) {
      if (opt.out.empty()) opt.out = "model.ffw";
      return run_train(opt);
    }
    if (*eval) return run_eval(opt);
    if (*ablate) return run_ablate(opt);
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const mpt::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return 1;
  } catch (const mpt::TrainingError& e) {
    std::cerr << "training failed: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
