#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cianet/errors.hpp"
#include "cianet/image.hpp"
#include "cianet/png_io.hpp"
#include "cianet/stain.hpp"
#include "cianet/synth.hpp"

namespace cianet {

enum class Split { train, test_seen, test_unseen };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test_seen: return "test-seen";
    case Split::test_unseen: return "test-unseen";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test-seen") return Split::test_seen;
  if (s == "test-unseen") return Split::test_unseen;
  throw ConfigError("unknown split '" + s + "' (expected train, test-seen or test-unseen)");
}

struct CorpusEntry {
  std::string image;   // relative to the corpus directory
  std::string labels;
  Split split = Split::train;
  std::uint64_t seed = 0;

  bool operator==(const CorpusEntry&) const = default;
};

struct CorpusManifest {
  int version = 1;
  std::vector<CorpusEntry> samples;
  std::string generator_config_digest;
  nlohmann::json extra = nlohmann::json::object();  // generator/noise settings for reference

  /// Entries of one split, in manifest order.
  std::vector<CorpusEntry> split(Split s) const {
    std::vector<CorpusEntry> out;
    for (const auto& e : samples)
      if (e.split == s) out.push_back(e);
    return out;
  }
};

/// Generation settings for a full corpus. Label noise is applied to the
/// training split only; test labels stay clean.
struct CorpusConfig {
  GeneratorConfig generator;
  int train = 200;
  int test_seen = 20;
  int test_unseen = 20;
  NoiseConfig noise;
  bool stain_normalize = false;

  void validate() const {
    generator.validate();
    generator.unseen_variant().validate();
    noise.validate();
    if (train < 0 || test_seen < 0 || test_unseen < 0 || train + test_seen + test_unseen == 0)
      throw ConfigError("corpus split sizes must be non-negative and not all zero");
  }
};

inline void to_json(nlohmann::json& j, const CorpusConfig& c) {
  j = nlohmann::json{{"generator", c.generator}, {"train", c.train},  {"test_seen", c.test_seen},
                     {"test_unseen", c.test_unseen}, {"noise", c.noise}, {"stain_normalize", c.stain_normalize}};
}
inline void from_json(const nlohmann::json& j, CorpusConfig& c) {
  const CorpusConfig d;
  c.generator = j.value("generator", d.generator);
  c.train = j.value("train", d.train);
  c.test_seen = j.value("test_seen", d.test_seen);
  c.test_unseen = j.value("test_unseen", d.test_unseen);
  c.noise = j.value("noise", d.noise);
  c.stain_normalize = j.value("stain_normalize", d.stain_normalize);
}

/// Throws ParseError unless split tags are valid and every file is listed once.
inline void validate_manifest(const CorpusManifest& m, const std::string& source) {
  if (m.samples.empty()) throw ParseError(source, 0, "manifest lists no samples");
  std::set<std::string> files;
  for (const auto& e : m.samples) {
    if (e.image.empty() || e.labels.empty()) throw ParseError(source, 0, "sample with empty file name");
    if (!files.insert(e.image).second) throw ParseError(source, 0, "file listed twice: " + e.image);
    if (!files.insert(e.labels).second) throw ParseError(source, 0, "file listed twice: " + e.labels);
  }
}

inline nlohmann::json manifest_json(const CorpusManifest& m) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& e : m.samples)
    samples.push_back({{"image", e.image}, {"labels", e.labels}, {"split", to_string(e.split)}, {"seed", e.seed}});
  return {{"version", m.version},
          {"samples", samples},
          {"generator_config_digest", m.generator_config_digest},
          {"settings", m.extra}};
}

/// Canonical form: sorted keys, two-space indent, trailing newline.
inline void write_manifest(const std::string& path, const CorpusManifest& m) {
  validate_manifest(m, path);
  std::ofstream f(path);
  if (!f) throw IoError("cannot create " + path);
  f << manifest_json(m).dump(2) << '\n';
  if (!f) throw IoError("write failed: " + path);
}

inline CorpusManifest parse_manifest(const std::string& text, const std::string& source) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(source, e.byte, e.what());
  }
  CorpusManifest m;
  try {
    m.version = j.at("version").get<int>();
    if (m.version != 1) throw ParseError(source, 0, "unsupported manifest version " + std::to_string(m.version));
    m.generator_config_digest = j.value("generator_config_digest", "");
    m.extra = j.value("settings", nlohmann::json::object());
    for (const auto& s : j.at("samples")) {
      CorpusEntry e;
      e.image = s.at("image").get<std::string>();
      e.labels = s.at("labels").get<std::string>();
      try {
        e.split = parse_split(s.at("split").get<std::string>());
      } catch (const ConfigError& err) {
        throw ParseError(source, 0, err.what());
      }
      e.seed = s.value("seed", std::uint64_t{0});
      m.samples.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(source, 0, e.what());
  }
  validate_manifest(m, source);
  return m;
}

inline CorpusManifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  const std::string text((std::istreambuf_iterator<char>(f)), {});
  return parse_manifest(text, path);
}

/// A corpus directory: corpus.json plus images/ and labels/.
struct Corpus {
  std::filesystem::path dir;
  CorpusManifest manifest;

  static Corpus open(const std::filesystem::path& dir) {
    return {dir, read_manifest((dir / "corpus.json").string())};
  }
  RgbImage image(const CorpusEntry& e) const { return png::read_rgb8((dir / e.image).string()); }
  LabelMap labels(const CorpusEntry& e) const { return png::read_labels16((dir / e.labels).string()); }
};

/// Generates and writes a three-split corpus. Sample i draws its seed from
/// (seed, i); the unseen split uses the generator's unseen variant.
inline CorpusManifest write_corpus(const std::filesystem::path& dir, const CorpusConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "labels");
  CorpusManifest m;
  m.generator_config_digest = config_digest(cfg.generator);
  m.extra = {{"corpus", cfg}, {"seed", seed}, {"unseen_config_digest", config_digest(cfg.generator.unseen_variant())}};
  const StainReference ref = StainReference::standard();
  std::uint64_t index = 0;
  auto emit = [&](Split split, int count, const GeneratorConfig& gen) {
    for (int i = 0; i < count; ++i, ++index) {
      const std::uint64_t s = derive_seed(seed, index);
      SampleRecord rec = generate_sample(gen, s);
      if (split == Split::train && cfg.noise.any()) rec.instances = inject_label_noise(rec.instances, cfg.noise, derive_seed(s, 1));
      if (cfg.stain_normalize) rec.image = macenko_normalize(rec.image, ref).image;
      char name[64];
      std::snprintf(name, sizeof name, "%s_%04d.png", to_string(split).c_str(), i);
      CorpusEntry e{std::string("images/") + name, std::string("labels/") + name, split, s};
      png::write_rgb8((dir / e.image).string(), rec.image);
      png::write_labels16((dir / e.labels).string(), rec.instances);
      m.samples.push_back(std::move(e));
    }
  };
  emit(Split::train, cfg.train, cfg.generator);
  emit(Split::test_seen, cfg.test_seen, cfg.generator);
  emit(Split::test_unseen, cfg.test_unseen, cfg.generator.unseen_variant());
  write_manifest((dir / "corpus.json").string(), m);
  return m;
}

}  // namespace cianet
