#include "ambireg/nn/checkpoint.hpp"

#include <fmt/format.h>

#include "ambireg/error.hpp"
#include "../binary_io.hpp"

namespace ambireg::nn {

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix)
{
  return std::filesystem::path(stem.string() + suffix);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& stem)
{
  nlohmann::json manifest;
  manifest["format"] = "ambireg-checkpoint-v1";
  manifest["dtype"] = "f64le";
  manifest["meta"] = ckpt.meta;
  manifest["tensors"] = nlohmann::json::array();
  std::string payload;
  std::size_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    manifest["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"count", t.size()}});
    detail::append_f64le(payload, t.values());
    offset += t.size();
  }
  // Payload first so a manifest never points at a missing/short payload.
  detail::write_file(with_suffix(stem, ".bin"), payload);
  detail::write_file(with_suffix(stem, ".json"), manifest.dump(1) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& stem)
{
  const auto json_path = with_suffix(stem, ".json");
  Checkpoint ckpt;
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(detail::read_file(json_path));
    if (manifest.at("format") != "ambireg-checkpoint-v1" || manifest.at("dtype") != "f64le") {
      throw FormatError("unsupported checkpoint format in " + json_path.string());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("bad checkpoint manifest {}: {}", json_path.string(), e.what()));
  }
  const std::vector<double> payload = detail::parse_f64le(detail::read_file(with_suffix(stem, ".bin")));
  ckpt.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& entry : manifest.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<int>>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto count = entry.at("count").get<std::size_t>();
    if (shape_size(shape) != count || offset + count > payload.size()) {
      throw FormatError(fmt::format("checkpoint tensor {} out of payload bounds", name));
    }
    Tensor t(shape);
    std::copy_n(payload.begin() + static_cast<std::ptrdiff_t>(offset), count, t.data());
    ckpt.tensors.emplace(name, std::move(t));
  }
  return ckpt;
}

bool checkpoint_exists(const std::filesystem::path& stem)
{
  return std::filesystem::exists(with_suffix(stem, ".json")) && std::filesystem::exists(with_suffix(stem, ".bin"));
}

}  // namespace ambireg::nn
