#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "levrl/hypothesis.hpp"
#include "levrl/rng.hpp"

LEVRL_NAMESPACE_BEGIN

enum class Task { Copy, Reverse, Sort, LexMap };

Task parse_task(std::string_view name);
std::string_view to_string(Task task);

/// Synthetic corpus description. `vocab_size` counts content symbols; the
/// model vocabulary adds the reserved ids on top.
struct DatasetSpec {
  Task task = Task::LexMap;
  int vocab_size = 32;
  int min_len = 4;
  int max_len = 12;
  std::size_t n_train = 10000;
  std::size_t n_valid = 500;
  std::size_t n_test = 500;
  std::uint64_t seed = 1;

  /// Model vocabulary size: reserved ids plus content symbols.
  int model_vocab_size() const { return vocab_size + vocab::kFirstContent; }
  std::vector<std::string> problems() const;
  void validate() const;
  nlohmann::json to_json() const;
  static DatasetSpec from_json(const nlohmann::json& j);
  bool operator==(const DatasetSpec&) const = default;
};

struct Example {
  TokenSeq src;
  TokenSeq tgt;
  bool operator==(const Example&) const = default;
};

/// Token translation: a bijection over content ids followed by a local
/// reordering in which a modifier token trades places with the next
/// non-modifier token.
struct LexMap {
  std::vector<TokenId> mapping;  // indexed by id; reserved ids map to themselves
  std::vector<std::uint8_t> modifier;

  static LexMap identity(int vocab_size);
  static LexMap random(int vocab_size, Rng& rng);
  TokenSeq apply(std::span<const TokenId> source) const;
  nlohmann::json to_json() const;
  static LexMap from_json(const nlohmann::json& j);
};

TokenSeq transduce(Task task, std::span<const TokenId> source, const LexMap& lexmap);

struct Dataset {
  DatasetSpec spec;
  LexMap lexmap;
  std::vector<Example> train, valid, test;
};

/// Deterministic in `spec`. Sources are unique across all three splits.
Dataset generate_dataset(const DatasetSpec& spec);

/// Writes train/valid/test .jsonl, vocab.txt and dataset.json into `dir`.
void write_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// One {"src": [...], "tgt": [...]} object per line. `tgt` is optional;
/// when absent it is left empty. Ids must lie in [kFirstContent, model_vocab).
std::vector<Example> read_pairs(const std::filesystem::path& path, int model_vocab_size);
void write_pairs(const std::filesystem::path& path, const std::vector<Example>& pairs);

/// Surface strings for every model id, reserved ids first.
std::vector<std::string> vocabulary_strings(int vocab_size);

LEVRL_NAMESPACE_END
