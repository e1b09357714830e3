#pragma once

#include <string>

#include <json.hpp>

#include "cfa/nn.hpp"

namespace cfa::nn {

// Binary checkpoint: 8-byte magic "CFACKPT1", u64 little-endian manifest
// length, manifest JSON, then one raw little-endian float64 block per
// parameter in manifest order. The manifest is
//   {"format_version": 1, "model": ..., "hyper": {...},
//    "params": [{"name", "group", "shape"}, ...]}.

struct CheckpointMeta {
  std::string model;
  nlohmann::json hyper;
};

void save_checkpoint(const std::string& path, const std::string& model,
                     const nlohmann::json& hyper, const ParameterSet& params);

// Reads the manifest without touching the parameter blocks.
CheckpointMeta peek_checkpoint(const std::string& path);

// Fills an already-constructed parameter set by name. Every manifest entry
// must match an existing parameter's shape and group, and vice versa.
CheckpointMeta load_checkpoint(const std::string& path, ParameterSet& params);

}  // namespace cfa::nn
