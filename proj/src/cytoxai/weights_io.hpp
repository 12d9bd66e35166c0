#pragma once

#include <filesystem>
#include <json.hpp>
#include <map>
#include <string>
#include <utility>

#include "cytoxai/nn/network.hpp"

namespace cytoxai {

// Weight bundle layout (little-endian):
//   "CXWB" | u32 version | u64 header length | JSON header | float32 payload
// The header holds a free-form "manifest" object and a "tensors" array of
// {layer, weight, shape, offset} entries, offsets counted in floats.
struct WeightBundle {
  nlohmann::json manifest;
  std::map<std::pair<std::string, std::string>, nn::Tensor> tensors;
};

void write_weight_bundle(const std::filesystem::path& path, const nlohmann::json& manifest, const nn::Network& net);
WeightBundle read_weight_bundle(const std::filesystem::path& path);

// Assigns bundle tensors to same-named weights. With `require_all`, every
// weight in `net` must be present. Shape mismatches always throw.
std::size_t assign_weights(nn::Network& net, const WeightBundle& bundle, bool require_all);

}  // namespace cytoxai
