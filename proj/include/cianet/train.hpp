#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "cianet/augment.hpp"
#include "cianet/checkpoint.hpp"
#include "cianet/corpus.hpp"
#include "cianet/errors.hpp"
#include "cianet/gemm.hpp"
#include "cianet/infer.hpp"
#include "cianet/losses.hpp"
#include "cianet/model.hpp"
#include "cianet/optim.hpp"
#include "cianet/postprocess.hpp"
#include "cianet/targets.hpp"

namespace cianet {

struct TrainConfig {
  CIANetConfig model;
  LossConfig loss;
  AdamWConfig optimizer;
  double lr_max = 1e-3;
  double lr_min = 1e-5;
  double lr_t0_epochs = 1.0;  // length of the first cosine cycle
  double lr_t_mult = 2.0;
  double lr_warmup_epochs = 1.0;  // linear ramp multiplied onto the schedule; 0 disables
  AugmentConfig augment = AugmentConfig::training();
  int contour_radius = kDefaultContourRadius;
  int batch_size = 3;
  int epochs = 15;
  std::uint64_t seed = 1;
  bool deterministic = true;
  int checkpoint_every = 0;     // epochs between checkpoints; 0 keeps only the final one
  int validation_images = 0;    // held out from the end of the train split
  PostConfig post;              // used for validation scoring
  int max_consecutive_skips = 10;
  int bce_warmup_epochs = 1;  // truncated losses train with plain BCE for this many epochs first
  std::string target_pooling = "mean";  // how coarse-level targets are formed: "mean" or "max"

  void validate() const {
    model.validate();
    loss.validate();
    optimizer.validate();
    augment.validate();
    post.validate();
    if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
    if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
    if (checkpoint_every < 0 || validation_images < 0) throw ConfigError("train cadence values must be non-negative");
    if (contour_radius < 1) throw ConfigError("train.contour_radius must be at least 1");
    if (target_pooling != "max" && target_pooling != "mean")
      throw ConfigError("train.target_pooling must be \"max\" or \"mean\", got \"" + target_pooling + "\"");
    if (bce_warmup_epochs < 0) throw ConfigError("train.bce_warmup_epochs must be non-negative");
    if (!(lr_warmup_epochs >= 0)) throw ConfigError("train.lr_warmup_epochs must be non-negative");
    if (!(lr_t0_epochs > 0)) throw ConfigError("train.lr_t0_epochs must be positive");
    if (loss.level_weights.size() != kDecoderLevels + 1)
      throw ConfigError("loss.level_weights needs " + std::to_string(kDecoderLevels + 1) + " entries");
    LRSchedule{lr_max, lr_min, 1, lr_t_mult}.validate();
  }

  std::int64_t warmup_steps(std::int64_t steps_per_epoch) const {
    return std::llround(lr_warmup_epochs * double(steps_per_epoch));
  }

  LRSchedule schedule(std::int64_t steps_per_epoch) const {
    return {lr_max, lr_min, std::max<std::int64_t>(1, std::llround(lr_t0_epochs * double(steps_per_epoch))), lr_t_mult};
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& t) {
  j = nlohmann::json{{"optimizer", t.optimizer},
                     {"lr_max", t.lr_max},
                     {"lr_min", t.lr_min},
                     {"lr_t0_epochs", t.lr_t0_epochs},
                     {"lr_t_mult", t.lr_t_mult},
                     {"lr_warmup_epochs", t.lr_warmup_epochs},
                     {"augment", t.augment},
                     {"contour_radius", t.contour_radius},
                     {"batch_size", t.batch_size},
                     {"epochs", t.epochs},
                     {"seed", t.seed},
                     {"deterministic", t.deterministic},
                     {"checkpoint_every", t.checkpoint_every},
                     {"validation_images", t.validation_images},
                     {"max_consecutive_skips", t.max_consecutive_skips},
                     {"bce_warmup_epochs", t.bce_warmup_epochs},
                     {"target_pooling", t.target_pooling}};
}

/// Reads the scalar training fields; model, loss and post live in their own
/// sections and are filled in by the experiment loader.
inline void from_json(const nlohmann::json& j, TrainConfig& t) {
  const TrainConfig d;
  t.optimizer = j.value("optimizer", d.optimizer);
  t.lr_max = j.value("lr_max", d.lr_max);
  t.lr_min = j.value("lr_min", d.lr_min);
  t.lr_t0_epochs = j.value("lr_t0_epochs", d.lr_t0_epochs);
  t.lr_t_mult = j.value("lr_t_mult", d.lr_t_mult);
  t.lr_warmup_epochs = j.value("lr_warmup_epochs", d.lr_warmup_epochs);
  t.augment = j.value("augment", d.augment);
  t.contour_radius = j.value("contour_radius", d.contour_radius);
  t.batch_size = j.value("batch_size", d.batch_size);
  t.epochs = j.value("epochs", d.epochs);
  t.seed = j.value("seed", d.seed);
  t.deterministic = j.value("deterministic", d.deterministic);
  t.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  t.validation_images = j.value("validation_images", d.validation_images);
  t.max_consecutive_skips = j.value("max_consecutive_skips", d.max_consecutive_skips);
  t.bce_warmup_epochs = j.value("bce_warmup_epochs", d.bce_warmup_epochs);
  t.target_pooling = j.value("target_pooling", d.target_pooling);
}

struct TrainResult {
  std::vector<double> losses;  // per step
  std::vector<double> lrs;
  std::vector<double> grad_norms;
  std::int64_t skipped_steps = 0;
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;  // empty without validation
  double best_validation_aji = -1.0;
  double seconds = 0.0;
};

namespace train_detail {

struct Example {
  RgbImage image;
  LabelMap instances;
  TargetPair targets;
};

// Mean pooling leaves soft targets; pixel losses read them as target > 0.5.
inline std::vector<LevelTargets<float>> level_targets(const Tensor<float>& nuclei, const Tensor<float>& contour,
                                                      const std::string& pooling) {
  const auto pool = pooling == "mean" ? &downsample_mean<float> : &downsample_max<float>;
  std::vector<LevelTargets<float>> t;
  for (std::size_t f : {8u, 4u, 2u}) t.push_back({pool(nuclei, f), pool(contour, f)});
  t.push_back({nuclei, contour});
  return t;
}

inline bool all_finite(const Tape<float>& tape, const std::vector<LevelPrediction>& levels) {
  for (const auto& l : levels)
    for (Var v : {l.nuclei, l.contour})
      for (float x : tape.value(v).vec())
        if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace train_detail

/// Model initialization seed for a training seed.
inline std::uint64_t init_seed(std::uint64_t seed) { return derive_seed(seed, 0x1417); }

/// Trains on the corpus's train split and writes `train_log.csv`,
/// `final.ckpt` and, at the configured cadence, `checkpoints/epoch_NNN.ckpt`
/// under `out_dir`. With deterministic set the loss trace depends only on
/// (config, corpus).
inline TrainResult run_training(const TrainConfig& cfg, const Corpus& corpus, const std::filesystem::path& out_dir,
                                std::ostream* progress = nullptr) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  auto entries = corpus.manifest.split(Split::train);
  if (int(entries.size()) <= cfg.validation_images)
    throw ConfigError("train split has " + std::to_string(entries.size()) + " images, not enough for " +
                      std::to_string(cfg.validation_images) + " validation images plus training");
  std::vector<CorpusEntry> holdout(entries.end() - cfg.validation_images, entries.end());
  entries.resize(entries.size() - std::size_t(cfg.validation_images));

  std::vector<train_detail::Example> data;
  for (const auto& e : entries) {
    train_detail::Example ex{corpus.image(e), corpus.labels(e), {}};
    require_same_extent(ex.image, ex.instances, e.image.c_str());
    ex.targets = extract_targets(ex.instances, cfg.contour_radius);
    data.push_back(std::move(ex));
  }
  const std::size_t H = cfg.augment.crop_size ? std::size_t(cfg.augment.crop_size) : data[0].image.height();
  const std::size_t W = cfg.augment.crop_size ? std::size_t(cfg.augment.crop_size) : data[0].image.width();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!cfg.augment.crop_size && !(data[i].image.height() == H && data[i].image.width() == W))
      throw DimensionError("H", "training images must share one size without cropping: " + entries[i].image);
    if (data[i].image.height() < H || data[i].image.width() < W)
      throw DimensionError("H", "image smaller than the crop: " + entries[i].image);
  }
  if (H % 16 != 0) throw DimensionError("H", "training tile height must be a multiple of 16");
  if (W % 16 != 0) throw DimensionError("W", "training tile width must be a multiple of 16");

  if (cfg.deterministic) blas::set_threads(1);
  std::filesystem::create_directories(out_dir);
  if (cfg.checkpoint_every > 0) std::filesystem::create_directories(out_dir / "checkpoints");
  std::ofstream log(out_dir / "train_log.csv");
  if (!log) throw IoError("cannot create " + (out_dir / "train_log.csv").string());
  log << "step,lr,loss,grad_norm\n";

  CIANetParams<float> params = build<float>(cfg.model, init_seed(cfg.seed));
  const std::size_t P = params.store.size();
  std::vector<Tensor<float>> storage;
  std::vector<Tensor<float>*> param_ptrs;
  for (std::size_t i = 0; i < P; ++i) param_ptrs.push_back(&params.store.at(i));
  auto opt = OptimizerState<float>::like(param_ptrs);

  const std::size_t n = data.size();
  const std::size_t B = std::size_t(cfg.batch_size);
  const std::int64_t steps_per_epoch = std::int64_t((n + B - 1) / B);
  const LRSchedule sched = cfg.schedule(steps_per_epoch);
  const std::int64_t warmup = cfg.warmup_steps(steps_per_epoch);
  const Corpus holdout_corpus{corpus.dir, CorpusManifest{1, holdout, "", {}}};

  TrainResult result;
  std::int64_t step = 0;
  int consecutive_skips = 0;
  const nlohmann::json cfg_json = {{"train", cfg}, {"loss", cfg.loss}, {"post", cfg.post}};
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 0x5000 + std::uint64_t(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    LossConfig loss_cfg = cfg.loss;
    const bool truncating = cfg.loss.nuclei_loss == NucleiLoss::truncated || cfg.loss.nuclei_loss == NucleiLoss::smooth_truncated;
    if (truncating && epoch < cfg.bce_warmup_epochs) loss_cfg.nuclei_loss = NucleiLoss::bce;
    double epoch_loss = 0;
    std::size_t epoch_steps = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += B, ++step) {
      const std::size_t nb = std::min(B, n - b0);
      Tensor<float> x(Shape{nb, 3, H, W}), tn(Shape{nb, 1, H, W}), tc(Shape{nb, 1, H, W});
      for (std::size_t k = 0; k < nb; ++k) {
        const auto& ex = data[order[b0 + k]];
        const auto aug = augment(ex.image, ex.instances, ex.targets, cfg.augment,
                                 derive_seed(derive_seed(cfg.seed, 0x6000 + std::uint64_t(step)), k));
        const Tensor<float> xi = image_to_tensor<float>(aug.image);
        std::copy(xi.vec().begin(), xi.vec().end(), x.plane_ptr(k, 0));
        for (std::size_t i = 0; i < H * W; ++i) {
          tn.plane_ptr(k, 0)[i] = aug.targets.nuclei[i] ? 1.f : 0.f;
          tc.plane_ptr(k, 0)[i] = aug.targets.contour[i] ? 1.f : 0.f;
        }
      }
      const auto targets = train_detail::level_targets(tn, tc, cfg.target_pooling);
      Tape<float> tape;
      const BoundParams<float> vars(tape, params.store, true);
      const Var input = tape.leaf(std::move(x), false);
      const ForwardOutputs out = CIANet<float>(tape, params, vars, Mode::train, &params.store).forward(input);
      const auto levels = out.levels();
      const double lr = lr_at(step, sched) * warmup_factor(step, warmup);
      double loss_value = std::nan("");
      StepReport rep{false, std::nan("")};
      if (train_detail::all_finite(tape, levels)) {
        const Var loss = total_loss<float>(tape, levels, targets, loss_cfg);
        loss_value = double(tape.value(loss)[0]);
        const Gradients<float> grads = tape.backward(loss);
        storage.clear();
        std::vector<const Tensor<float>*> grad_ptrs(P);
        storage.reserve(P);
        for (std::size_t i = 0; i < P; ++i) {
          if (grads.has(vars.at(i))) {
            grad_ptrs[i] = &grads.at(vars.at(i));
          } else {
            storage.emplace_back(params.store.at(i).shape(), 0.f);
            grad_ptrs[i] = &storage.back();
          }
        }
        if (std::isfinite(loss_value)) rep = adamw_step(param_ptrs, grad_ptrs, opt, lr, cfg.optimizer);
      }
      if (!rep.applied) {
        ++result.skipped_steps;
        if (++consecutive_skips > cfg.max_consecutive_skips)
          throw NumericError("training diverged: " + std::to_string(consecutive_skips) +
                             " consecutive steps with non-finite loss or gradient");
      } else {
        consecutive_skips = 0;
      }
      char line[128];
      std::snprintf(line, sizeof line, "%lld,%.9g,%.9g,%.9g\n", static_cast<long long>(step), lr, loss_value,
                    rep.applied ? rep.grad_norm : std::nan(""));
      log << line;
      result.losses.push_back(loss_value);
      result.lrs.push_back(lr);
      result.grad_norms.push_back(rep.grad_norm);
      epoch_loss += loss_value;
      ++epoch_steps;
    }
    log.flush();
    const nlohmann::json meta = {{"epoch", epoch + 1}, {"step", step}, {"config", cfg_json}};
    double val_aji = -1;
    const bool at_cadence = cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0;
    if (at_cadence) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d.ckpt", epoch + 1);
      save_checkpoint(out_dir / "checkpoints" / name, params, meta);
    }
    if (!holdout.empty() && (at_cadence || epoch + 1 == cfg.epochs)) {
      val_aji = evaluate_checkpoint(params, holdout_corpus, {Split::train}, cfg.post).mean_aji(Split::train);
      if (val_aji > result.best_validation_aji) {
        result.best_validation_aji = val_aji;
        result.best_checkpoint = out_dir / "best.ckpt";
        save_checkpoint(result.best_checkpoint, params, meta);
      }
    }
    if (progress) {
      *progress << "epoch " << epoch + 1 << "/" << cfg.epochs << " mean loss " << epoch_loss / double(epoch_steps);
      if (val_aji >= 0) *progress << " validation AJI " << val_aji;
      *progress << '\n';
    }
  }
  result.final_checkpoint = out_dir / "final.ckpt";
  save_checkpoint(result.final_checkpoint, params,
                  {{"epoch", cfg.epochs}, {"step", step}, {"config", cfg_json}});
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

}  // namespace cianet
