#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "levrl/dataset.hpp"

using namespace levrl;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

DatasetSpec small_spec(Task task) {
  DatasetSpec s;
  s.task = task;
  s.vocab_size = 12;
  s.n_train = 300;
  s.n_valid = 40;
  s.n_test = 40;
  s.seed = 5;
  return s;
}

}  // namespace

TEST_CASE("task names") {
  for (Task t : {Task::Copy, Task::Reverse, Task::Sort, Task::LexMap}) CHECK(parse_task(to_string(t)) == t);
  CHECK_THROWS_AS(parse_task("translate"), ConfigError);
}

TEST_CASE("simple transductions") {
  const LexMap id = LexMap::identity(8);
  const TokenSeq src{9, 5, 7, 5};
  CHECK(transduce(Task::Copy, src, id) == src);
  CHECK(transduce(Task::Reverse, src, id) == TokenSeq{5, 7, 5, 9});
  CHECK(transduce(Task::Sort, src, id) == TokenSeq{5, 5, 7, 9});
  CHECK(transduce(Task::LexMap, src, id) == src);
}

TEST_CASE("lexmap is a bijection with local reordering") {
  Rng rng(2);
  const LexMap m = LexMap::random(20, rng);
  std::set<TokenId> image;
  for (TokenId t = vocab::kFirstContent; t < 20 + vocab::kFirstContent; ++t) image.insert(m.mapping[std::size_t(t)]);
  CHECK(image.size() == 20);
  CHECK(*image.begin() == vocab::kFirstContent);
  for (TokenId t = 0; t < vocab::kFirstContent; ++t) CHECK(m.mapping[std::size_t(t)] == t);

  TokenId mod = -1, plain = -1;
  for (TokenId t = vocab::kFirstContent; t < 20 + vocab::kFirstContent; ++t) {
    (m.modifier[std::size_t(t)] ? mod : plain) = t;
  }
  REQUIRE(mod >= 0);
  REQUIRE(plain >= 0);
  const TokenSeq src{mod, plain};
  CHECK(m.apply(src) == TokenSeq{m.mapping[std::size_t(plain)], m.mapping[std::size_t(mod)]});
  const TokenSeq tail{plain, mod};
  CHECK(m.apply(tail) == TokenSeq{m.mapping[std::size_t(plain)], m.mapping[std::size_t(mod)]});
  CHECK(LexMap::from_json(m.to_json()).mapping == m.mapping);
}

TEST_CASE("generation is deterministic and well formed") {
  for (Task task : {Task::Copy, Task::Reverse, Task::Sort, Task::LexMap}) {
    const DatasetSpec spec = small_spec(task);
    const Dataset a = generate_dataset(spec), b = generate_dataset(spec);
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);
    CHECK(a.train.size() == spec.n_train);
    CHECK(a.valid.size() == spec.n_valid);
    std::set<TokenSeq> seen;
    for (const auto* split : {&a.train, &a.valid, &a.test}) {
      for (const Example& ex : *split) {
        CHECK(seen.insert(ex.src).second);
        CHECK(int(ex.src.size()) >= spec.min_len);
        CHECK(int(ex.src.size()) <= spec.max_len);
        CHECK(ex.tgt == transduce(task, ex.src, a.lexmap));
        for (TokenId t : ex.src) {
          CHECK(t >= vocab::kFirstContent);
          CHECK(t < spec.model_vocab_size());
        }
      }
    }
  }
  DatasetSpec other = small_spec(Task::LexMap);
  other.seed = 6;
  CHECK_FALSE(generate_dataset(other).train == generate_dataset(small_spec(Task::LexMap)).train);
}

TEST_CASE("DatasetSpec validation") {
  DatasetSpec s;
  s.vocab_size = 1;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = DatasetSpec{};
  s.min_len = 9;
  s.max_len = 3;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = DatasetSpec{};
  s.vocab_size = 2;
  s.max_len = 2;
  s.min_len = 1;
  s.n_train = 1000;
  CHECK_THROWS(generate_dataset(s));
  CHECK(DatasetSpec::from_json(DatasetSpec{}.to_json()) == DatasetSpec{});
  nlohmann::json j = DatasetSpec{}.to_json();
  j["colour"] = 1;
  CHECK_THROWS_AS(DatasetSpec::from_json(j), ConfigError);
}

TEST_CASE("files round-trip byte for byte") {
  const auto root = std::filesystem::temp_directory_path() / "levrl_test_dataset";
  std::filesystem::remove_all(root);
  const Dataset data = generate_dataset(small_spec(Task::LexMap));
  write_dataset(data, root / "a");
  write_dataset(generate_dataset(small_spec(Task::LexMap)), root / "b");
  for (const char* f : {"train.jsonl", "valid.jsonl", "test.jsonl", "vocab.txt", "dataset.json"}) {
    CHECK(slurp(root / "a" / f) == slurp(root / "b" / f));
  }
  const Dataset back = load_dataset(root / "a");
  CHECK(back.spec == data.spec);
  CHECK(back.train == data.train);
  CHECK(back.lexmap.mapping == data.lexmap.mapping);
  CHECK(vocabulary_strings(3) == std::vector<std::string>{"<pad>", "<s>", "</s>", "<plh>", "<unk>", "w0", "w1", "w2"});

  std::ofstream(root / "bad.jsonl") << "{\"src\": [5, 99]}\n";
  CHECK_THROWS_AS(read_pairs(root / "bad.jsonl", 17), VocabularyError);
  std::ofstream(root / "junk.jsonl") << "{\"src\": [5]}\nnot json\n";
  CHECK_THROWS_AS(read_pairs(root / "junk.jsonl", 17), IoError);
  std::ofstream(root / "nosrc.jsonl") << "{\"tgt\": [5]}\n";
  CHECK_THROWS(read_pairs(root / "nosrc.jsonl", 17));
  CHECK_THROWS_AS(load_dataset(root / "missing"), IoError);
  std::filesystem::remove_all(root);
}
