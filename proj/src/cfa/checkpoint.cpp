#include "cfa/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "cfa/errors.hpp"

namespace cfa::nn {

namespace {

constexpr char kMagic[8] = {'C', 'F', 'A', 'C', 'K', 'P', 'T', '1'};

void put_u64_le(std::ostream& os, uint64_t x) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(x >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

uint64_t get_u64_le(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return x;
}

void put_f64_le(std::ostream& os, const double* data, size_t n) {
  std::vector<unsigned char> buf(n * 8);
  for (size_t i = 0; i < n; ++i) {
    uint64_t bits;
    std::memcpy(&bits, &data[i], 8);
    for (int b = 0; b < 8; ++b)
      buf[i * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size()));
}

void get_f64_le(std::istream& is, double* data, size_t n) {
  std::vector<unsigned char> buf(n * 8);
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  for (size_t i = 0; i < n; ++i) {
    uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= static_cast<uint64_t>(buf[i * 8 + b]) << (8 * b);
    std::memcpy(&data[i], &bits, 8);
  }
}

nlohmann::json read_manifest(std::istream& is, const std::string& path) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("not a checkpoint file: " + path);
  const uint64_t len = get_u64_le(is);
  if (!is || len == 0 || len > (1ull << 30))
    throw IoError("corrupt checkpoint manifest length: " + path);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw IoError("truncated checkpoint manifest: " + path);
  nlohmann::json m = nlohmann::json::parse(text, nullptr, false);
  if (m.is_discarded() || !m.is_object())
    throw IoError("corrupt checkpoint manifest: " + path);
  return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& model,
                     const nlohmann::json& hyper, const ParameterSet& params) {
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["model"] = model;
  manifest["hyper"] = hyper;
  auto& plist = manifest["params"] = nlohmann::json::array();
  for (const auto& e : params.entries()) {
    plist.push_back({{"name", e.name},
                     {"group", to_string(e.group)},
                     {"shape", e.tensor->shape}});
  }
  const std::string text = manifest.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 8);
  put_u64_le(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : params.entries())
    put_f64_le(os, e.tensor->v.data(), e.tensor->v.size());
  os.flush();
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

CheckpointMeta peek_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  nlohmann::json m = read_manifest(is, path);
  return {m.value("model", std::string()), m.value("hyper", nlohmann::json::object())};
}

CheckpointMeta load_checkpoint(const std::string& path, ParameterSet& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  nlohmann::json m = read_manifest(is, path);
  if (!m.contains("params") || !m["params"].is_array())
    throw IoError("checkpoint manifest lacks a parameter list: " + path);

  size_t matched = 0;
  for (const auto& entry : m["params"]) {
    const std::string name = entry.at("name").get<std::string>();
    const auto group = param_group_from_string(entry.at("group").get<std::string>());
    const auto shape = entry.at("shape").get<std::vector<int>>();
    TensorRef t = params.find(name);
    if (!t) throw IoError("checkpoint has unknown parameter " + name);
    if (t->shape != shape)
      throw IoError("checkpoint shape mismatch for parameter " + name);
    bool group_ok = false;
    for (const auto& e : params.entries())
      if (e.name == name && e.group == group) group_ok = true;
    if (!group_ok)
      throw IoError("checkpoint group mismatch for parameter " + name);
    get_f64_le(is, t->v.data(), t->v.size());
    if (!is) throw IoError("truncated checkpoint data: " + path);
    ++matched;
  }
  if (matched != params.entries().size())
    throw IoError("checkpoint does not cover all model parameters: " + path);
  return {m.value("model", std::string()), m.value("hyper", nlohmann::json::object())};
}

}  // namespace cfa::nn
