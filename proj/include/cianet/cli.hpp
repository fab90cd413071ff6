#pragma once

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cianet/checkpoint.hpp"
#include "cianet/config.hpp"
#include "cianet/corpus.hpp"
#include "cianet/errors.hpp"
#include "cianet/infer.hpp"
#include "cianet/losses.hpp"
#include "cianet/metrics.hpp"
#include "cianet/png_io.hpp"
#include "cianet/targets.hpp"
#include "cianet/train.hpp"

namespace cianet::cli {

enum Exit : int { ok = 0, usage = 1, data = 2, numeric = 3 };

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string split;
  std::optional<double> gamma;
  std::string loss;
  bool no_iam = false;
  std::string corpus;
  std::string checkpoint;
  std::string pred;
  std::vector<std::string> overrides;
  int verbose = 0;
};

namespace detail {

inline std::vector<std::string> flag_overrides(const Options& o) {
  std::vector<std::string> v = o.overrides;
  if (o.gamma) v.push_back("loss.gamma=" + nlohmann::json(*o.gamma).dump());
  if (!o.loss.empty()) v.push_back("loss.nuclei_loss=\"" + o.loss + "\"");
  if (o.no_iam) v.push_back("model.use_iam=false");
  return v;
}

inline std::vector<Split> splits_for(const std::string& name, std::vector<Split> fallback) {
  if (name.empty()) return fallback;
  if (name == "test") return {Split::test_seen, Split::test_unseen};
  return {parse_split(name)};
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p);
  if (!f) throw IoError("cannot create " + p.string());
  f << text;
  if (!f) throw IoError("write failed: " + p.string());
}

inline void write_report(const std::filesystem::path& out, const MetricsReport& r) {
  std::ofstream csv(out / "metrics.csv");
  if (!csv) throw IoError("cannot create " + (out / "metrics.csv").string());
  r.write_csv(csv);
  write_text(out / "summary.json", r.summary().dump(2) + "\n");
}

inline CIANetParams<float> load_for(const Options& o, const ExperimentConfig& cfg) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  if (!std::filesystem::exists(o.checkpoint)) throw IoError("checkpoint not found: " + o.checkpoint);
  CheckpointInfo info;
  auto params = load_checkpoint<float>(o.checkpoint, &info);
  // A model section given explicitly must agree with the checkpoint.
  if (!o.config.empty() && !(info.config == cfg.train.model))
    throw ConfigError("checkpoint " + o.checkpoint + " does not match the configured model");
  return params;
}

inline int cmd_gen(const Options& o, const ExperimentConfig& cfg, std::ostream& out) {
  const auto m = write_corpus(o.out, cfg.corpus, o.seed.value_or(cfg.corpus_seed));
  out << "wrote " << m.samples.size() << " samples to " << o.out << "\n";
  return ok;
}

inline int cmd_train(const Options& o, ExperimentConfig cfg, std::ostream& out) {
  if (o.corpus.empty()) throw ConfigError("--corpus is required");
  if (o.seed) cfg.train.seed = *o.seed;
  const Corpus corpus = Corpus::open(o.corpus);
  std::filesystem::create_directories(o.out);
  write_text(std::filesystem::path(o.out) / "config.json", cfg.to_json().dump(2) + "\n");
  const TrainResult r = run_training(cfg.train, corpus, o.out, o.verbose ? &out : nullptr);
  out << "trained " << r.losses.size() << " steps in " << r.seconds << " s; loss " << r.losses.front() << " -> "
      << r.losses.back() << "; checkpoint " << r.final_checkpoint.string() << "\n";
  if (r.skipped_steps) out << r.skipped_steps << " steps skipped for non-finite gradients\n";
  return ok;
}

inline int cmd_infer(const Options& o, const ExperimentConfig& cfg, std::ostream& out) {
  if (o.corpus.empty()) throw ConfigError("--corpus is required");
  const auto params = load_for(o, cfg);
  const Corpus corpus = Corpus::open(o.corpus);
  const std::filesystem::path dir(o.out);
  std::filesystem::create_directories(dir / "labels");
  std::filesystem::create_directories(dir / "maps");
  const auto splits = splits_for(o.split, {Split::test_seen, Split::test_unseen});
  const auto report = evaluate_checkpoint(
      params, corpus, splits, cfg.post, cfg.infer,
      [&](const CorpusEntry& e, const ProbabilityMaps& maps, const LabelMap& labels) {
        const auto stem = std::filesystem::path(e.labels).stem().string();
        png::write_labels16((dir / "labels" / (stem + ".png")).string(), labels);
        std::ofstream f(dir / "maps" / (stem + ".nmap"), std::ios::binary);
        if (!f) throw IoError("cannot create map for " + stem);
        Tensor<float> t(Shape{1, 2, maps.nuclei.height(), maps.nuclei.width()});
        std::copy(maps.nuclei.vec().begin(), maps.nuclei.vec().end(), t.plane_ptr(0, 0));
        std::copy(maps.contour.vec().begin(), maps.contour.vec().end(), t.plane_ptr(0, 1));
        nmap::write(f, t);
      });
  out << "wrote " << report.images.size() << " predictions to " << o.out << "\n";
  return ok;
}

inline int cmd_eval(const Options& o, const ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
  if (o.corpus.empty()) throw ConfigError("--corpus is required");
  const Corpus corpus = Corpus::open(o.corpus);
  const auto splits = splits_for(o.split, {Split::test_seen, Split::test_unseen});
  MetricsReport report;
  if (!o.pred.empty()) {
    report = evaluate_corpus(corpus, o.pred, splits);
  } else {
    report = evaluate_checkpoint(load_for(o, cfg), corpus, splits, cfg.post, cfg.infer);
  }
  std::filesystem::create_directories(o.out);
  write_report(o.out, report);
  for (const auto& [k, s] : report.split_means())
    out << k << ": images " << s.images << " AJI " << s.aji << " F1 " << s.f1 << "\n";
  if (!report.missing.empty()) {
    for (const auto& m : report.missing) err << "missing prediction: " << m << "\n";
    return data;
  }
  return ok;
}

inline int cmd_analyze_loss(const Options& o, const ExperimentConfig& cfg, std::ostream& out) {
  if (o.corpus.empty()) throw ConfigError("--corpus is required");
  const auto params = load_for(o, cfg);
  const Corpus corpus = Corpus::open(o.corpus);
  const auto splits = splits_for(o.split, {Split::train});
  std::vector<double> losses;
  for (const auto& e : corpus.manifest.samples) {
    if (std::find(splits.begin(), splits.end(), e.split) == splits.end()) continue;
    const auto maps = predict_image(params, corpus.image(e), cfg.infer);
    const auto targets = extract_targets(corpus.labels(e), cfg.train.contour_radius);
    for (std::size_t i = 0; i < maps.nuclei.size(); ++i) {
      const double p = std::clamp(double(maps.nuclei[i]), 1e-7, 1 - 1e-7);
      losses.push_back(loss::nuclei_pixel<double>(cfg.train.loss, p, targets.nuclei[i] ? 1 : 0).value);
    }
  }
  if (losses.empty()) throw ConfigError("no corpus samples in the requested split");
  const LossCdf cdf = loss_cdf(losses);
  std::filesystem::create_directories(o.out);
  std::ofstream csv(std::filesystem::path(o.out) / "loss_cdf.csv");
  if (!csv) throw IoError("cannot create loss_cdf.csv");
  cdf.write_csv(csv, 2000);
  const nlohmann::json summary = {{"pixels", losses.size()},
                                  {"loss", to_string(cfg.train.loss.nuclei_loss)},
                                  {"gamma", cfg.train.loss.gamma},
                                  {"top10_share", cdf.top_share(0.1)},
                                  {"final", cdf.cumulative.back()},
                                  {"degenerate", cdf.degenerate}};
  write_text(std::filesystem::path(o.out) / "loss_summary.json", summary.dump(2) + "\n");
  out << "top 10% of pixels carry " << cdf.top_share(0.1) * 100 << "% of the " << to_string(cfg.train.loss.nuclei_loss)
      << " loss over " << losses.size() << " pixels\n";
  return ok;
}

}  // namespace detail

/// Parses argv and runs one subcommand. Returns the process exit status.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Nuclei instance segmentation with contour-aware aggregation"};
  app.require_subcommand(1, 1);
  Options o;
  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "experiment JSON file")->check(CLI::ExistingFile);
    c->add_option("--out", o.out, "output directory")->required();
    c->add_option("--seed", o.seed, "seed override");
    c->add_option("--set", o.overrides, "override a config key, e.g. train.epochs=5");
    c->add_flag("-v,--verbose", o.verbose, "progress output");
  };
  auto add_loss = [&](CLI::App* c) {
    c->add_option("--gamma", o.gamma, "truncation threshold");
    c->add_option("--loss", o.loss, "nuclei loss: bce|bootstrapped|truncated|smooth_truncated");
  };
  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus");
  add_common(gen);
  auto* train = app.add_subcommand("train", "train a model on a corpus");
  add_common(train);
  add_loss(train);
  train->add_option("--corpus", o.corpus, "corpus directory")->required();
  train->add_flag("--no-iam", o.no_iam, "disable the aggregation module");
  auto* infer = app.add_subcommand("infer", "write probability maps and instance maps");
  add_common(infer);
  infer->add_option("--corpus", o.corpus, "corpus directory")->required();
  infer->add_option("--checkpoint", o.checkpoint, "model checkpoint")->required();
  infer->add_option("--split", o.split, "train|test-seen|test-unseen|test");
  auto* eval = app.add_subcommand("eval", "score predictions or a checkpoint");
  add_common(eval);
  eval->add_option("--corpus", o.corpus, "corpus directory")->required();
  eval->add_option("--pred", o.pred, "directory of predicted instance maps");
  eval->add_option("--checkpoint", o.checkpoint, "model checkpoint (when --pred is absent)");
  eval->add_option("--split", o.split, "train|test-seen|test-unseen|test");
  auto* analyze = app.add_subcommand("analyze-loss", "cumulative per-pixel loss distribution");
  add_common(analyze);
  add_loss(analyze);
  analyze->add_option("--corpus", o.corpus, "corpus directory")->required();
  analyze->add_option("--checkpoint", o.checkpoint, "model checkpoint")->required();
  analyze->add_option("--split", o.split, "train|test-seen|test-unseen|test");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return usage;
  }
  try {
    if (eval->parsed() && o.pred.empty() && o.checkpoint.empty())
      throw ConfigError("eval needs --pred or --checkpoint");
    const ExperimentConfig cfg = load_experiment(o.config, detail::flag_overrides(o));
    if (gen->parsed()) return detail::cmd_gen(o, cfg, out);
    if (train->parsed()) return detail::cmd_train(o, cfg, out);
    if (infer->parsed()) return detail::cmd_infer(o, cfg, out);
    if (eval->parsed()) return detail::cmd_eval(o, cfg, out, err);
    return detail::cmd_analyze_loss(o, cfg, out);
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << "\n";
    return usage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return numeric;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << "\n";
    return data;
  }
}

}  // namespace cianet::cli
