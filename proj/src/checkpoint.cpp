#include "densetrack/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "densetrack/config.hpp"
#include "densetrack/error.hpp"

namespace densetrack::checkpoint {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'D', 'T', 'C', 'K', 'P', 'T', '0', '1'};
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

}  // namespace

const nn::Tensor& Archive::array(const std::string& name) const {
  for (const auto& [n, t] : arrays) {
    if (n == name) return t;
  }
  fail(ErrorCode::kIo, "checkpoint has no array '" + name + "'");
}

bool Archive::has_array(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.first == name) return true;
  }
  return false;
}

void save_archive(const std::string& path, const Archive& archive) {
  json header;
  try {
    header["meta"] = json::parse(archive.meta_json);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kInvalidArgument, std::string("checkpoint meta is not valid JSON: ") + e.what());
  }
  header["arrays"] = json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : archive.arrays) {
    header["arrays"].push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
    offset += t.numel();
  }
  const std::string text = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot write checkpoint " + tmp);
    const uint64_t len = text.size();
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& a : archive.arrays) {
      out.write(reinterpret_cast<const char*>(a.second.ptr()), static_cast<std::streamsize>(a.second.numel() * sizeof(float)));
    }
    if (!out) fail(ErrorCode::kIo, "short write to checkpoint " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::kIo, "cannot move checkpoint into place: " + ec.message());
}

Archive load_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open checkpoint " + path);
  char magic[8];
  uint64_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) fail(ErrorCode::kIo, path + " is not a checkpoint");
  if (len > (1ULL << 30)) fail(ErrorCode::kIo, path + ": implausible header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) fail(ErrorCode::kIo, path + ": truncated header");

  json header;
  try {
    header = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kIo, path + ": corrupt header: " + e.what());
  }
  Archive out;
  out.meta_json = header.at("meta").dump();
  uint64_t expected_offset = 0;
  for (const auto& a : header.at("arrays")) {
    const auto shape = a.at("shape").get<std::vector<int>>();
    if (a.at("offset").get<uint64_t>() != expected_offset) fail(ErrorCode::kIo, path + ": array offsets out of order");
    nn::Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!in) fail(ErrorCode::kIo, path + ": truncated array payload");
    expected_offset += t.numel();
    out.arrays.emplace_back(a.at("name").get<std::string>(), std::move(t));
  }
  return out;
}

void add_model(Archive& archive, const model::Model& m) {
  json meta = json::parse(archive.meta_json);
  meta["model"] = json::parse(config::to_json(m.config()));
  archive.meta_json = meta.dump();
  for (const auto& [name, v] : m.params().items()) archive.arrays.emplace_back("param/" + name, v->value);
}

model::ModelConfig model_config(const Archive& archive) {
  const json meta = json::parse(archive.meta_json);
  // Model checkpoints carry "model"; training states carry the full run config.
  if (meta.contains("model")) return config::model_config_from_json(meta["model"].dump());
  if (meta.contains("config") && meta["config"].contains("model")) {
    return config::model_config_from_json(meta["config"]["model"].dump());
  }
  fail(ErrorCode::kIo, "checkpoint carries no model config");
}

void restore_parameters(const Archive& archive, model::Model& m) {
  for (auto& [name, v] : m.params().items()) {
    const nn::Tensor& t = archive.array("param/" + name);
    if (t.shape != v->value.shape) {
      fail(ErrorCode::kIo, "checkpoint parameter " + name + " has shape " + t.shape_str() + ", model expects " +
                               v->value.shape_str());
    }
    v->value = t;
  }
}

void save_model(const std::string& path, const model::Model& m, const std::string& meta_json) {
  Archive a;
  a.meta_json = meta_json;
  add_model(a, m);
  save_archive(path, a);
}

model::Model load_model(const std::string& path) {
  const Archive a = load_archive(path);
  model::Model m(model_config(a));
  restore_parameters(a, m);
  return m;
}

}  // namespace densetrack::checkpoint
