#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "levrl/tensor.hpp"

LEVRL_NAMESPACE_BEGIN

enum class StorageType : std::uint8_t { Float32 = 4, Float64 = 8 };

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
  StorageType storage = StorageType::Float32;
};

/// Contents of a checkpoint file: a JSON header plus named arrays.
/// Layout is described in docs/checkpoint_format.md.
struct CheckpointData {
  nlohmann::json header = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::filesystem::path& path);

/// Storage type matching the library's Real.
constexpr StorageType native_storage() {
  return sizeof(Real) == 8 ? StorageType::Float64 : StorageType::Float32;
}

LEVRL_NAMESPACE_END
