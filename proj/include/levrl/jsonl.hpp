#pragma once

#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "levrl/common.hpp"

LEVRL_NAMESPACE_BEGIN

/// Reads one JSON value per non-empty line. Errors name the file and line.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

/// Line-delimited JSON sink; each record is flushed as it is written.
class JsonlWriter {
 public:
  JsonlWriter() = default;
  /// Truncates unless `append` is set. Creates missing parent directories.
  explicit JsonlWriter(const std::filesystem::path& path, bool append = false);

  bool is_open() const { return out_.is_open(); }
  void write(const nlohmann::json& record);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

void write_text_file(const std::filesystem::path& path, const std::string& contents);
std::string read_text_file(const std::filesystem::path& path);

LEVRL_NAMESPACE_END
