#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "cianet/errors.hpp"
#include "cianet/model.hpp"
#include "cianet/tensor.hpp"

namespace cianet {

// Layout: "CIACKPT1", u32 manifest length, manifest JSON, u32 entry count,
// then per entry a u32-length-prefixed name followed by one NMAP tensor.
// Running statistics are stored as "<bn>.running_mean" / "<bn>.running_var".
inline constexpr char kCheckpointMagic[8] = {'C', 'I', 'A', 'C', 'K', 'P', 'T', '1'};

template <class T>
void save_checkpoint(std::ostream& os, const CIANetParams<T>& params, const nlohmann::json& meta = {}) {
  const std::string manifest = nlohmann::json{{"format", 1}, {"model", params.config}, {"meta", meta}}.dump();
  os.write(kCheckpointMagic, 8);
  nmap::detail::put_u32(os, std::uint32_t(manifest.size()));
  os.write(manifest.data(), std::streamsize(manifest.size()));
  const auto& store = params.store;
  nmap::detail::put_u32(os, std::uint32_t(store.size() + 2 * store.stats_names().size()));
  auto entry = [&](const std::string& name, const Tensor<T>& t) {
    nmap::detail::put_u32(os, std::uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    nmap::write(os, t);
  };
  for (std::size_t i = 0; i < store.size(); ++i) entry(store.name(i), store.at(i));
  for (const auto& bn : store.stats_names()) {
    entry(bn + ".running_mean", store.stats(bn).mean);
    entry(bn + ".running_var", store.stats(bn).var);
  }
  if (!os) throw IoError("checkpoint write failed");
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const CIANetParams<T>& params, const nlohmann::json& meta = {}) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot create " + path.string());
  save_checkpoint(f, params, meta);
}

struct CheckpointInfo {
  CIANetConfig config;
  nlohmann::json meta;
};

/// Reads a checkpoint; the tensor table must match the architecture named in
/// its own manifest exactly, and `expected` (if given) must equal that config.
template <class T = float>
CIANetParams<T> load_checkpoint(std::istream& is, const std::string& source, CheckpointInfo* info = nullptr,
                                const CIANetConfig* expected = nullptr) {
  std::size_t offset = 0;
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw ParseError(source, 0, "not a checkpoint file");
  offset = 8;
  const std::uint32_t mlen = nmap::detail::get_u32(is, source, offset);
  if (mlen > (1u << 24)) throw ParseError(source, offset - 4, "manifest length is implausible");
  std::string manifest(mlen, '\0');
  if (!is.read(manifest.data(), mlen)) throw ParseError(source, offset, "truncated manifest");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(manifest);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(source, offset + e.byte, e.what());
  }
  offset += mlen;
  CIANetConfig cfg;
  try {
    cfg = j.at("model").get<CIANetConfig>();
    cfg.validate();
  } catch (const std::exception& e) {
    throw ParseError(source, 12, std::string("bad model config: ") + e.what());
  }
  if (expected && !(*expected == cfg))
    throw ConfigError("checkpoint " + source + " was trained with a different model configuration");
  if (info) *info = {cfg, j.value("meta", nlohmann::json::object())};

  CIANetParams<T> params = build<T>(cfg, 0);
  auto& store = params.store;
  const std::uint32_t count = nmap::detail::get_u32(is, source, offset);
  const std::size_t want = store.size() + 2 * store.stats_names().size();
  if (count != want)
    throw ParseError(source, offset - 4, "checkpoint holds " + std::to_string(count) + " tensors, model needs " +
                                             std::to_string(want));
  auto next = [&](const std::string& expect_name, Tensor<T>& into) {
    const std::size_t at = offset;
    const std::uint32_t len = nmap::detail::get_u32(is, source, offset);
    if (len > 4096) throw ParseError(source, at, "name length is implausible");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw ParseError(source, offset, "truncated name table");
    offset += len;
    if (name != expect_name) throw ParseError(source, at, "expected tensor '" + expect_name + "', found '" + name + "'");
    const std::size_t tensor_at = offset;
    Tensor<T> t = nmap::read<T>(is, source, offset);
    if (!(t.shape() == into.shape()))
      throw ParseError(source, tensor_at, "tensor '" + name + "' has shape " + t.shape().str() + ", model needs " +
                                              into.shape().str());
    into = std::move(t);
  };
  for (std::size_t i = 0; i < store.size(); ++i) next(store.name(i), store.at(i));
  for (const auto& bn : store.stats_names()) {
    next(bn + ".running_mean", store.stats(bn).mean);
    next(bn + ".running_var", store.stats(bn).var);
  }
  return params;
}

template <class T = float>
CIANetParams<T> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr,
                                const CIANetConfig* expected = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  return load_checkpoint<T>(f, path.string(), info, expected);
}

}  // namespace cianet
