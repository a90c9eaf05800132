#pragma once

#include <string>
#include <utility>
#include <vector>

#include "densetrack/model.hpp"
#include "densetrack/nn.hpp"

namespace densetrack::checkpoint {

// File layout:
//   8 bytes   magic "DTCKPT01"
//   u64 LE    length of the JSON header
//   JSON      {"meta": {...}, "arrays": [{"name", "shape", "offset"}...]}
//   float32 LE array payloads, in header order
struct Archive {
  std::string meta_json = "{}";
  std::vector<std::pair<std::string, nn::Tensor>> arrays;

  const nn::Tensor& array(const std::string& name) const;
  bool has_array(const std::string& name) const;
};

// Written to a temporary file and renamed, so a crash never leaves a
// truncated checkpoint under the final name.
void save_archive(const std::string& path, const Archive& archive);
Archive load_archive(const std::string& path);

// Model-only checkpoint: config plus "param/<name>" arrays.
void add_model(Archive& archive, const model::Model& m);
void save_model(const std::string& path, const model::Model& m, const std::string& meta_json = "{}");
model::Model load_model(const std::string& path);
// Copies "param/<name>" arrays into an existing model of matching config.
void restore_parameters(const Archive& archive, model::Model& m);
model::ModelConfig model_config(const Archive& archive);

}  // namespace densetrack::checkpoint
