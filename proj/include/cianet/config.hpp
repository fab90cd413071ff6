#pragma once

#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "cianet/corpus.hpp"
#include "cianet/errors.hpp"
#include "cianet/infer.hpp"
#include "cianet/losses.hpp"
#include "cianet/model.hpp"
#include "cianet/postprocess.hpp"
#include "cianet/train.hpp"

namespace cianet {

/// One experiment file: sections corpus, model, loss, train, post, infer.
struct ExperimentConfig {
  CorpusConfig corpus;
  std::uint64_t corpus_seed = 7;
  TrainConfig train;  // model, loss and post are mirrored from their sections
  PostConfig post;
  TileConfig infer;

  void validate() const {
    corpus.validate();
    train.validate();
    post.validate();
    infer.validate();
  }

  nlohmann::json to_json() const {
    nlohmann::json c = corpus;
    c["seed"] = corpus_seed;
    return {{"corpus", c}, {"model", train.model}, {"loss", train.loss},
            {"train", train}, {"post", post},      {"infer", infer}};
  }
};

inline const std::vector<std::string>& experiment_sections() {
  static const std::vector<std::string> s{"corpus", "model", "loss", "train", "post", "infer"};
  return s;
}

/// Sets `dotted.path=value` in a JSON document. The value is read as JSON
/// when it parses, otherwise as a string.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override path '" + path + "' has an empty component");
    if (!node->is_object()) throw ConfigError("override path '" + path + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    const auto& s = experiment_sections();
    if (std::find(s.begin(), s.end(), k) == s.end()) throw ConfigError("unknown config section '" + k + "'");
  }
  ExperimentConfig e;
  try {
    const nlohmann::json empty = nlohmann::json::object();
    const auto& c = j.contains("corpus") ? j["corpus"] : empty;
    e.corpus = c.get<CorpusConfig>();
    e.corpus_seed = c.value("seed", e.corpus_seed);
    e.train = (j.contains("train") ? j["train"] : empty).get<TrainConfig>();
    e.train.model = (j.contains("model") ? j["model"] : empty).get<CIANetConfig>();
    e.train.loss = (j.contains("loss") ? j["loss"] : empty).get<LossConfig>();
    e.post = (j.contains("post") ? j["post"] : empty).get<PostConfig>();
    e.infer = (j.contains("infer") ? j["infer"] : empty).get<TileConfig>();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("bad config value: ") + ex.what());
  }
  e.train.post = e.post;
  e.validate();
  return e;
}

/// Loads an experiment file (empty path = built-in defaults) and applies
/// dotted-path overrides in order.
inline ExperimentConfig load_experiment(const std::string& path, const std::vector<std::string>& overrides = {}) {
  nlohmann::json doc = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path);
    const std::string text((std::istreambuf_iterator<char>(f)), {});
    try {
      doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(path, e.byte, e.what());
    }
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return experiment_from_json(doc);
}

}  // namespace cianet
