#include "levrl/dataset.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <string>

#include "levrl/jsonl.hpp"

LEVRL_NAMESPACE_BEGIN

Task parse_task(std::string_view name) {
  if (name == "copy") return Task::Copy;
  if (name == "reverse") return Task::Reverse;
  if (name == "sort") return Task::Sort;
  if (name == "lexmap") return Task::LexMap;
  throw ConfigError("unknown task '" + std::string(name) + "' (expected copy|reverse|sort|lexmap)");
}

std::string_view to_string(Task task) {
  switch (task) {
    case Task::Copy:
      return "copy";
    case Task::Reverse:
      return "reverse";
    case Task::Sort:
      return "sort";
    case Task::LexMap:
      return "lexmap";
  }
  return "?";
}

std::vector<std::string> DatasetSpec::problems() const {
  std::vector<std::string> problems;
  if (vocab_size < 2) problems.push_back("vocab_size must be at least 2");
  if (vocab_size + vocab::kFirstContent > 0xffff) problems.push_back("vocab_size too large");
  if (min_len < 1) problems.push_back("min_len must be at least 1");
  if (max_len < min_len) problems.push_back("max_len must be >= min_len");
  if (n_train == 0) problems.push_back("n_train must be positive");
  return problems;
}

void DatasetSpec::validate() const {
  const auto found = problems();
  if (!found.empty()) {
    std::string msg = "invalid dataset spec:";
    for (const auto& p : found) msg += "\n  - " + p;
    throw ConfigError(msg);
  }
}

nlohmann::json DatasetSpec::to_json() const {
  return {{"task", to_string(task)}, {"vocab_size", vocab_size}, {"min_len", min_len}, {"max_len", max_len},
          {"n_train", n_train},      {"n_valid", n_valid},       {"n_test", n_test},   {"seed", seed}};
}

DatasetSpec DatasetSpec::from_json(const nlohmann::json& j) {
  DatasetSpec s;
  for (const auto& [key, value] : j.items()) {
    if (key == "task") s.task = parse_task(value.get<std::string>());
    else if (key == "vocab_size") s.vocab_size = value.get<int>();
    else if (key == "min_len") s.min_len = value.get<int>();
    else if (key == "max_len") s.max_len = value.get<int>();
    else if (key == "n_train") s.n_train = value.get<std::size_t>();
    else if (key == "n_valid") s.n_valid = value.get<std::size_t>();
    else if (key == "n_test") s.n_test = value.get<std::size_t>();
    else if (key == "seed") s.seed = value.get<std::uint64_t>();
    else throw ConfigError("unknown dataset key '" + key + "'");
  }
  return s;
}

// ---------------------------------------------------------------- lexmap

LexMap LexMap::identity(int vocab_size) {
  LexMap m;
  const int total = vocab_size + vocab::kFirstContent;
  m.mapping.resize(std::size_t(total));
  for (int i = 0; i < total; ++i) m.mapping[std::size_t(i)] = i;
  m.modifier.assign(std::size_t(total), 0);
  return m;
}

LexMap LexMap::random(int vocab_size, Rng& rng) {
  LexMap m = identity(vocab_size);
  // Fisher-Yates with our own generator keeps files identical across standard libraries.
  for (std::size_t i = m.mapping.size() - 1; i > std::size_t(vocab::kFirstContent); --i) {
    const std::size_t j = std::size_t(vocab::kFirstContent) + rng.below(i - std::size_t(vocab::kFirstContent) + 1);
    std::swap(m.mapping[i], m.mapping[j]);
  }
  for (std::size_t i = std::size_t(vocab::kFirstContent); i < m.modifier.size(); ++i) {
    m.modifier[i] = rng.bernoulli(0.25) ? 1 : 0;
  }
  return m;
}

TokenSeq LexMap::apply(std::span<const TokenId> source) const {
  TokenSeq out(source.size());
  std::vector<std::size_t> order(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) order[i] = i;
  for (std::size_t i = 0; i + 1 < source.size(); ++i) {
    if (modifier[std::size_t(source[i])] && !modifier[std::size_t(source[i + 1])]) {
      std::swap(order[i], order[i + 1]);
      ++i;
    }
  }
  for (std::size_t i = 0; i < source.size(); ++i) out[i] = mapping[std::size_t(source[order[i]])];
  return out;
}

nlohmann::json LexMap::to_json() const { return {{"mapping", mapping}, {"modifier", modifier}}; }

LexMap LexMap::from_json(const nlohmann::json& j) {
  LexMap m;
  m.mapping = j.at("mapping").get<std::vector<TokenId>>();
  m.modifier = j.at("modifier").get<std::vector<std::uint8_t>>();
  if (m.mapping.size() != m.modifier.size()) throw ConfigError("lexmap: mapping and modifier sizes differ");
  return m;
}

TokenSeq transduce(Task task, std::span<const TokenId> source, const LexMap& lexmap) {
  TokenSeq out(source.begin(), source.end());
  switch (task) {
    case Task::Copy:
      break;
    case Task::Reverse:
      std::reverse(out.begin(), out.end());
      break;
    case Task::Sort:
      std::sort(out.begin(), out.end());
      break;
    case Task::LexMap:
      out = lexmap.apply(source);
      break;
  }
  return out;
}

// ---------------------------------------------------------------- generation

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset data;
  data.spec = spec;
  Rng map_rng(derive_seed(spec.seed, "lexmap"));
  data.lexmap = spec.task == Task::LexMap ? LexMap::random(spec.vocab_size, map_rng) : LexMap::identity(spec.vocab_size);

  Rng rng(derive_seed(spec.seed, "data"));
  std::set<TokenSeq> seen;
  const std::size_t wanted = spec.n_train + spec.n_valid + spec.n_test;
  std::vector<Example> all;
  all.reserve(wanted);
  std::size_t attempts = 0;
  while (all.size() < wanted) {
    if (++attempts > 100 * wanted + 1000) {
      throw ConfigError("dataset spec admits too few distinct sources for " + std::to_string(wanted) + " pairs");
    }
    const std::size_t len = std::size_t(spec.min_len) + rng.below(std::size_t(spec.max_len - spec.min_len + 1));
    TokenSeq src(len);
    for (auto& t : src) t = vocab::kFirstContent + TokenId(rng.below(std::size_t(spec.vocab_size)));
    if (!seen.insert(src).second) continue;
    Example ex;
    ex.tgt = transduce(spec.task, src, data.lexmap);
    ex.src = std::move(src);
    all.push_back(std::move(ex));
  }
  auto it = all.begin();
  data.train.assign(it, it + long(spec.n_train));
  it += long(spec.n_train);
  data.valid.assign(it, it + long(spec.n_valid));
  it += long(spec.n_valid);
  data.test.assign(it, all.end());
  return data;
}

std::vector<std::string> vocabulary_strings(int vocab_size) {
  std::vector<std::string> out{"<pad>", "<s>", "</s>", "<plh>", "<unk>"};
  for (int i = 0; i < vocab_size; ++i) out.push_back("w" + std::to_string(i));
  return out;
}

void write_pairs(const std::filesystem::path& path, const std::vector<Example>& pairs) {
  std::ostringstream out;
  for (const auto& ex : pairs) out << nlohmann::json{{"src", ex.src}, {"tgt", ex.tgt}}.dump() << '\n';
  write_text_file(path, out.str());
}

std::vector<Example> read_pairs(const std::filesystem::path& path, int model_vocab_size) {
  std::vector<Example> out;
  std::size_t lineno = 0;
  auto check = [&](const TokenSeq& seq, const char* field) {
    for (TokenId t : seq) {
      if (t < vocab::kFirstContent || t >= model_vocab_size) {
        throw VocabularyError(path.string() + ": record " + std::to_string(lineno) + " field '" + field +
                              "' holds id " + std::to_string(t) + " outside the content range [" +
                              std::to_string(vocab::kFirstContent) + ", " + std::to_string(model_vocab_size) + ")");
      }
    }
  };
  for (const auto& j : read_jsonl(path)) {
    ++lineno;
    Example ex;
    try {
      ex.src = j.at("src").get<TokenSeq>();
      if (j.contains("tgt")) ex.tgt = j.at("tgt").get<TokenSeq>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ": record " + std::to_string(lineno) + ": " + e.what());
    }
    check(ex.src, "src");
    check(ex.tgt, "tgt");
    out.push_back(std::move(ex));
  }
  return out;
}

void write_dataset(const Dataset& data, const std::filesystem::path& dir) {
  write_pairs(dir / "train.jsonl", data.train);
  write_pairs(dir / "valid.jsonl", data.valid);
  write_pairs(dir / "test.jsonl", data.test);
  std::string vocab;
  for (const auto& w : vocabulary_strings(data.spec.vocab_size)) vocab += w + "\n";
  write_text_file(dir / "vocab.txt", vocab);
  const nlohmann::json meta{{"spec", data.spec.to_json()}, {"lexmap", data.lexmap.to_json()}};
  write_text_file(dir / "dataset.json", meta.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_text_file(dir / "dataset.json"));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError((dir / "dataset.json").string() + ": " + e.what());
  }
  Dataset data;
  data.spec = DatasetSpec::from_json(meta.at("spec"));
  data.lexmap = LexMap::from_json(meta.at("lexmap"));
  const int v = data.spec.model_vocab_size();
  data.train = read_pairs(dir / "train.jsonl", v);
  data.valid = read_pairs(dir / "valid.jsonl", v);
  data.test = read_pairs(dir / "test.jsonl", v);
  return data;
}

LEVRL_NAMESPACE_END
