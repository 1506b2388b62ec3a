#include <doctest.h>

#include <filesystem>
#include <numeric>

#include "levrl/edit.hpp"
#include "levrl/supervised.hpp"

using namespace levrl;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 13;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_encoder_layers = 1;
  c.n_decoder_layers = 1;
  c.ffn_dim = 32;
  c.max_placeholders = 8;
  c.max_seq_len = 16;
  return c;
}

std::vector<Example> copy_examples(std::size_t n) {
  DatasetSpec s;
  s.task = Task::Copy;
  s.vocab_size = 8;
  s.min_len = 2;
  s.max_len = 6;
  s.n_train = n;
  s.n_valid = 10;
  s.n_test = 10;
  return generate_dataset(s).train;
}

std::vector<std::vector<Real>> snapshot(const LevtModel& model) {
  std::vector<std::vector<Real>> out;
  for (const auto& p : model.parameters()) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

double mean(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

}  // namespace

TEST_CASE("expert targets are consistent with their states") {
  LevtModel model(small_config(), 1);
  const auto examples = copy_examples(64);
  Rng rng(4);
  for (int round = 0; round < 5; ++round) {
    const SupervisedBatch batch = build_batch(model, examples, RollInOptions{}, round % 2 == 1, rng);
    batch.validate(model.config());
    for (const auto& item : batch.items) {
      const Hypothesis after_del = apply_delete(item.rollin, item.expert.delete_mask);
      CHECK(after_del.tokens == item.insert_state.tokens);
      const Hypothesis holes = apply_insert(after_del, item.expert.insert_counts, model.config().max_placeholders,
                                            std::size_t(model.config().max_seq_len));
      CHECK(holes.tokens == item.token_state.tokens);
      CHECK(apply_replace(holes, item.expert.fill_tokens).content() == item.reference);
    }
  }
}

TEST_CASE("a finished state has keep-only targets") {
  const TokenSeq ref{5, 6, 7};
  const SupervisedItem item = make_item(ref, ref, Hypothesis::from_content(ref), 16);
  for (auto d : item.expert.delete_mask) CHECK(d == 0);
  for (int c : item.expert.insert_counts) CHECK(c == 0);
  CHECK(item.expert.fill_tokens.empty());
  LevtModel model(small_config(), 1);
  const SupervisedLoss loss = supervised_loss(model, SupervisedBatch{{item}});
  CHECK(loss.report.token_positions == 0);
  CHECK(loss.report.delete_positions == 3);
  CHECK(loss.report.insert_positions == 4);
  CHECK(std::isfinite(loss.report.total));
}

TEST_CASE("batch validation catches mismatched targets") {
  const TokenSeq ref{5, 6, 7};
  SupervisedItem item = make_item(ref, ref, Hypothesis::null(), 16);
  item.expert.insert_counts.push_back(1);
  CHECK_THROWS_AS(SupervisedBatch{{item}}.validate(small_config()), ShapeError);
}

TEST_CASE("batches do not mix positions between examples") {
  LevtModel model(small_config(), 2);
  const auto examples = copy_examples(6);
  Rng rng(7);
  const SupervisedBatch batch = build_batch(model, examples, RollInOptions{}, false, rng);
  double del = 0, ins = 0, tok = 0;
  std::size_t nd = 0, ni = 0, nt = 0;
  for (const auto& item : batch.items) {
    const auto r = supervised_loss(model, SupervisedBatch{{item}}).report;
    del += r.delete_ce * double(r.delete_positions);
    ins += r.insert_ce * double(r.insert_positions);
    tok += r.token_ce * double(r.token_positions);
    nd += r.delete_positions;
    ni += r.insert_positions;
    nt += r.token_positions;
  }
  const auto r = supervised_loss(model, batch).report;
  CHECK(r.delete_positions == nd);
  CHECK(r.delete_ce == doctest::Approx(del / double(nd)).epsilon(1e-5));
  CHECK(r.insert_ce == doctest::Approx(ins / double(ni)).epsilon(1e-5));
  CHECK(r.token_ce == doctest::Approx(tok / double(nt)).epsilon(1e-5));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  LevtModel model(small_config(), 3);
  const auto before = snapshot(model);
  Rng rng(1);
  const auto batch = build_batch(model, copy_examples(8), RollInOptions{}, false, rng);
  for (OptimizerKind kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
    Optimizer opt(kind, model.parameters());
    supervised_step(model, batch, opt, 0.0);
    CHECK(snapshot(model) == before);
  }
}

TEST_CASE("loss falls on a copy task") {
  LevtModel model(small_config(), 5);
  const auto examples = copy_examples(100);
  TrainingState state = fresh_training_state(model, OptimizerKind::Adam);
  PretrainOptions o;
  o.steps = 200;
  o.batch = 16;
  o.lr = 3e-3;
  o.warmup = 20;
  o.eval_every = 0;
  std::vector<double> losses;
  o.on_step = [&](long, const LossReport& r) { losses.push_back(r.total); };
  pretrain(model, state, examples, {}, o);
  REQUIRE(losses.size() == 200);
  CHECK(mean(std::span(losses).last(40)) < 0.7 * mean(std::span(losses).first(40)));
}

TEST_CASE("a single example is memorized") {
  LevtModel model(small_config(), 6);
  const std::vector<Example> one{{{5, 9, 6, 11}, {5, 9, 6, 11}}};
  Optimizer opt(OptimizerKind::Adam, model.parameters());
  Rng rng(2);
  RollInOptions rollin;
  rollin.self_rate = 0;
  double last = 0;
  for (int step = 0; step < 400; ++step) {
    last = supervised_step(model, build_batch(model, one, rollin, false, rng), opt, 3e-3).total;
  }
  CHECK(last < 0.05);
  CHECK(greedy_decode(model, one[0].src, 10).hypothesis.content() == one[0].tgt);
}

TEST_CASE("resumed training repeats the original run exactly") {
  const auto dir = std::filesystem::temp_directory_path() / "levrl_test_supervised";
  std::filesystem::remove_all(dir);
  const auto examples = copy_examples(50);
  PretrainOptions o;
  o.steps = 12;
  o.batch = 4;
  o.warmup = 3;
  o.self_rollin_after = 4;
  o.eval_every = 0;
  o.checkpoint_every = 6;
  o.checkpoint = dir / "model.ckpt";
  o.metrics = dir / "metrics.jsonl";

  LevtModel full(small_config(), 8);
  TrainingState full_state = fresh_training_state(full, OptimizerKind::Adam);
  std::vector<double> full_losses;
  o.on_step = [&](long, const LossReport& r) { full_losses.push_back(r.total); };
  PretrainOptions first = o;
  first.steps = 6;
  LevtModel part(small_config(), 8);
  TrainingState part_state = fresh_training_state(part, OptimizerKind::Adam);
  first.on_step = nullptr;
  pretrain(part, part_state, examples, {}, first);

  o.checkpoint = dir / "full.ckpt";
  o.metrics.clear();
  pretrain(full, full_state, examples, {}, o);

  LoadedTraining loaded = load_training_checkpoint(dir / "model.ckpt", OptimizerKind::Adam);
  CHECK(loaded.state.step == 6);
  std::vector<double> resumed;
  PretrainOptions rest = o;
  rest.checkpoint = dir / "model.ckpt";
  rest.metrics = dir / "metrics.jsonl";
  rest.on_step = [&](long, const LossReport& r) { resumed.push_back(r.total); };
  pretrain(loaded.model, loaded.state, examples, {}, rest);
  REQUIRE(resumed.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(resumed[i] == full_losses[6 + i]);
  CHECK(snapshot(loaded.model) == snapshot(full));
  CHECK_THROWS_AS(load_training_checkpoint(dir / "model.ckpt", OptimizerKind::Sgd), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("held-out BLEU does not depend on the thread count") {
  LevtModel model(small_config(), 9);
  const auto examples = copy_examples(30);
  CHECK(heldout_bleu(model, examples, 10, 1) == heldout_bleu(model, examples, 10, 3));
  const auto hyps = decode_all(model, examples, 10, 2);
  CHECK(hyps.size() == examples.size());
}
