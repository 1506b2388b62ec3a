#include "levrl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

LEVRL_NAMESPACE_BEGIN

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian hosts");

namespace {

constexpr char kMagic[8] = {'L', 'E', 'V', 'R', 'L', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw IoError("truncated checkpoint: " + path.string());
  }
  return value;
}

std::string get_bytes(std::istream& in, std::size_t n, const std::filesystem::path& path) {
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw IoError("truncated checkpoint: " + path.string());
  }
  return s;
}

}  // namespace

const NamedArray* CheckpointData::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    const std::string header = data.header.dump();
    put<std::uint64_t>(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    put<std::uint64_t>(out, data.arrays.size());
    for (const auto& a : data.arrays) {
      if (shape_size(a.shape) != a.values.size()) {
        throw ShapeError("checkpoint array '" + a.name + "' shape does not match its values");
      }
      put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
      out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
      put<std::uint8_t>(out, static_cast<std::uint8_t>(a.storage));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
      for (auto d : a.shape) put<std::uint64_t>(out, d);
      for (double v : a.values) {
        if (a.storage == StorageType::Float32) {
          put<float>(out, static_cast<float>(v));
        } else {
          put<double>(out, v);
        }
      }
    }
    if (!out) throw IoError("failed writing checkpoint: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not a levrl checkpoint: " + path.string());
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + path.string());
  }
  CheckpointData data;
  const auto header_len = get<std::uint64_t>(in, path);
  try {
    data.header = nlohmann::json::parse(get_bytes(in, header_len, path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  const auto count = get<std::uint64_t>(in, path);
  for (std::uint64_t k = 0; k < count; ++k) {
    NamedArray a;
    a.name = get_bytes(in, get<std::uint32_t>(in, path), path);
    const auto storage = get<std::uint8_t>(in, path);
    if (storage != 4 && storage != 8) throw IoError("bad storage tag in " + path.string());
    a.storage = static_cast<StorageType>(storage);
    const auto rank = get<std::uint32_t>(in, path);
    for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(get<std::uint64_t>(in, path));
    const std::size_t n = shape_size(a.shape);
    a.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      a.values[i] = a.storage == StorageType::Float32 ? double(get<float>(in, path)) : get<double>(in, path);
    }
    data.arrays.push_back(std::move(a));
  }
  return data;
}

LEVRL_NAMESPACE_END
