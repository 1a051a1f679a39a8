#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "ambireg/nn/tensor.hpp"

namespace ambireg::nn {

/// Named tensors plus free-form metadata. On disk: `<stem>.json` (manifest with
/// names, shapes and payload offsets) and `<stem>.bin` (little-endian f64).
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& stem);
Checkpoint load_checkpoint(const std::filesystem::path& stem);
bool checkpoint_exists(const std::filesystem::path& stem);

}  // namespace ambireg::nn
