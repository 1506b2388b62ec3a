#include <doctest.h>

#include <cmath>
#include <numeric>

#include "levrl/edit.hpp"

using namespace levrl;

namespace {

constexpr TokenId B = vocab::kBos, E = vocab::kEos, P = vocab::kPlh;

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 16;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_encoder_layers = 1;
  c.n_decoder_layers = 1;
  c.ffn_dim = 32;
  c.max_placeholders = 8;
  c.max_seq_len = 24;
  return c;
}

TokenSeq random_source(Rng& rng, const ModelConfig& c, std::size_t max_len) {
  TokenSeq s(1 + rng.below(max_len));
  for (auto& t : s) t = vocab::kFirstContent + TokenId(rng.below(std::size_t(c.vocab_size - vocab::kFirstContent)));
  return s;
}

void set_all(Tensor t, Real v) {
  for (auto& x : t.mutable_values()) x = v;
}

}  // namespace

TEST_CASE("apply_delete") {
  const Hypothesis h{{B, 5, 6, 7, E}};
  const std::vector<std::uint8_t> mask{0, 1, 0};
  CHECK(apply_delete(h, mask) == Hypothesis{{B, 5, 7, E}});
  CHECK(apply_delete(h, std::vector<std::uint8_t>(3, 0)) == h);
  CHECK(apply_delete(h, std::vector<std::uint8_t>(3, 1)) == Hypothesis::null());
  CHECK_THROWS_AS(apply_delete(h, std::vector<std::uint8_t>(2, 0)), ShapeError);
  CHECK_THROWS_AS(apply_delete(Hypothesis{{B, P, E}}, std::vector<std::uint8_t>(1, 0)), StateError);
}

TEST_CASE("apply_insert") {
  CHECK(apply_insert(Hypothesis::null(), std::vector<int>{3}, 64, 64) == Hypothesis{{B, P, P, P, E}});
  const Hypothesis h{{B, 5, 6, E}};
  CHECK(apply_insert(h, std::vector<int>{0, 0, 0}, 64, 64) == h);
  CHECK(apply_insert(h, std::vector<int>{1, 0, 2}, 64, 64) == Hypothesis{{B, P, 5, 6, P, P, E}});
  CHECK_THROWS_AS(apply_insert(h, std::vector<int>{0, 0}, 64, 64), ShapeError);
  CHECK_THROWS_AS(apply_insert(h, std::vector<int>{0, 9, 0}, 8, 64), LengthError);
  CHECK_THROWS_AS(apply_insert(h, std::vector<int>{2, 2, 2}, 8, 9), LengthError);

  Rng rng(3);
  for (int trial = 0; trial < 2000; ++trial) {
    TokenSeq content(rng.below(10));
    for (auto& t : content) t = 5 + TokenId(rng.below(5));
    const Hypothesis base = Hypothesis::from_content(content);
    std::vector<int> counts(base.size() - 1);
    for (auto& c : counts) c = int(rng.below(4));
    const std::size_t expected = base.size() + std::size_t(std::accumulate(counts.begin(), counts.end(), 0));
    const Hypothesis out = apply_insert(base, counts, 8, 100);
    CHECK(out.size() == expected);
    CHECK(out.placeholder_count() == expected - base.size());
  }
}

TEST_CASE("apply_replace") {
  CHECK(apply_replace(Hypothesis{{B, P, E}}, TokenSeq{9}) == Hypothesis{{B, 9, E}});
  const Hypothesis h{{B, 5, E}};
  CHECK(apply_replace(h, TokenSeq{}) == h);
  const Hypothesis two{{B, P, 5, P, E}};
  const Hypothesis filled = apply_replace(two, TokenSeq{7, 8});
  CHECK(filled == Hypothesis{{B, 7, 5, 8, E}});
  CHECK(filled.size() == two.size());
  CHECK_THROWS_AS(apply_replace(two, TokenSeq{7}), ShapeError);
  CHECK_THROWS_AS(apply_replace(two, TokenSeq{7, B}), VocabularyError);
  CHECK_THROWS_AS(apply_replace(two, TokenSeq{P, 7}), VocabularyError);
}

TEST_CASE("clamp_insert_counts lowers from the right") {
  std::vector<int> counts{3, 3, 3};
  CHECK(clamp_insert_counts(counts, 4, 10));
  CHECK(counts == std::vector<int>{3, 3, 0});
  std::vector<int> fits{1, 1};
  CHECK_FALSE(clamp_insert_counts(fits, 3, 10));
  CHECK(fits == std::vector<int>{1, 1});
}

TEST_CASE("sampling at low temperature follows the argmax") {
  // Well-separated logits: row argmaxes 2, 0, 1.
  const Tensor logits({3, 3}, {0, 0.5f, 2, 2, 0, 0.5f, 0.5f, 2, 0});
  Rng rng(17);
  const int draws = 10000;
  std::vector<int> hits(3, 0);
  for (int i = 0; i < draws; ++i) {
    const SampledEdit s = sample_edit(logits, EditKind::Insert, Real(0.01), rng);
    for (std::size_t r = 0; r < 3; ++r) hits[r] += s.action.insert_counts[r] == std::vector<int>{2, 0, 1}[r];
  }
  for (int h : hits) CHECK(double(h) / draws > 0.99);
  CHECK_THROWS_AS(sample_edit(logits, EditKind::Insert, Real(0), rng), InvalidArgument);
}

TEST_CASE("sampled log-prob equals rescoring and is deterministic") {
  Rng data(5);
  std::vector<Real> v(4 * 6);
  for (auto& x : v) x = Real(data.normal());
  const Tensor logits({4, 6}, v);
  for (Real tau : {Real(0.1), Real(0.5), Real(1), Real(2)}) {
    Rng a(99), b(99);
    const SampledEdit s1 = sample_edit(logits, EditKind::Replace, tau, a);
    const SampledEdit s2 = sample_edit(logits, EditKind::Replace, tau, b);
    CHECK(s1.action == s2.action);
    CHECK(s1.log_prob.item() == s2.log_prob.item());
    CHECK(s1.log_prob.item() <= 0);
    CHECK(score_edit(logits, s1.action, tau).item() == doctest::Approx(s1.log_prob.item()).epsilon(1e-6));
    // Independent evaluation of the summed tempered log-probabilities.
    double expected = 0;
    for (std::size_t r = 0; r < 4; ++r) {
      double mx = -1e300;
      for (std::size_t c = 0; c < 6; ++c) mx = std::max(mx, double(v[r * 6 + c]) / tau);
      double z = 0;
      for (std::size_t c = 0; c < 6; ++c) z += std::exp(double(v[r * 6 + c]) / tau - mx);
      expected += double(v[r * 6 + std::size_t(s1.action.replace_tokens[r])]) / tau - mx - std::log(z);
    }
    CHECK(double(s1.log_prob.item()) == doctest::Approx(expected).epsilon(1e-5));
  }
}

TEST_CASE("empty distributions give zero log-prob") {
  const Tensor none = Tensor::zeros({0, 2});
  Rng rng(1);
  const SampledEdit s = sample_edit(none, EditKind::Delete, 1, rng);
  CHECK(s.action.delete_mask.empty());
  CHECK(s.log_prob.item() == 0);
}

TEST_CASE("greedy_decode terminates on random models") {
  const ModelConfig c = small_config();
  Rng rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    LevtModel model(c, 1000 + std::uint64_t(trial));
    const TokenSeq src = random_source(rng, c, 12);
    const DecodeResult r = greedy_decode(model, src);
    CHECK(r.iterations >= 1);
    CHECK(r.iterations <= 10);
    CHECK_NOTHROW(validate_hypothesis(r.hypothesis, std::size_t(c.max_seq_len), std::size_t(c.vocab_size)));
    CHECK_FALSE(r.hypothesis.has_placeholders());
  }
}

TEST_CASE("greedy_decode stops at iteration 2 for a do-nothing policy") {
  LevtModel model(small_config(), 3);
  set_all(model.parameter("head.insert.weight").tensor, 0);
  Tensor ib = model.parameter("head.insert.bias").tensor;
  set_all(ib, -10);
  ib.mutable_values()[0] = 10;
  set_all(model.parameter("head.delete.weight").tensor, 0);
  Tensor db = model.parameter("head.delete.bias").tensor;
  db.mutable_values()[0] = 10;
  db.mutable_values()[1] = -10;
  const DecodeResult r = greedy_decode(model, TokenSeq{5, 6, 7});
  CHECK(r.iterations == 2);
  CHECK(r.hypothesis == Hypothesis::null());
}

TEST_CASE("rollout structure") {
  const ModelConfig c = small_config();
  LevtModel model(c, 11);
  const TokenSeq src{5, 6, 7, 8};
  RolloutOptions opt;
  opt.record_step_bleu = true;
  opt.reference = TokenSeq{5, 6, 7, 8};
  Rng rng(2);
  const Rollout r = rollout(model, src, opt, rng);
  const auto& steps = r.trace.steps;
  REQUIRE(steps.size() == 8);
  CHECK(r.log_probs.size() == 8);
  const std::vector<EditKind> kinds{EditKind::Insert, EditKind::Replace, EditKind::Delete, EditKind::Insert,
                                    EditKind::Replace, EditKind::Delete, EditKind::Insert, EditKind::Replace};
  const std::vector<int> iters{1, 1, 2, 2, 2, 3, 3, 3};
  int bleu_points = 0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    CHECK(steps[i].kind == kinds[i]);
    CHECK(steps[i].iteration == iters[i]);
    CHECK(steps[i].log_prob <= 0);
    if (i > 0) CHECK(steps[i].before == steps[i - 1].after);
    if (steps[i].bleu) ++bleu_points;
    if (steps[i].kind != EditKind::Insert) CHECK_FALSE(steps[i].after.has_placeholders());
  }
  CHECK(steps.front().before == Hypothesis::null());
  CHECK(steps.back().after == r.trace.final_hypothesis);
  CHECK(bleu_points == 5);

  opt.reference.reset();
  CHECK_THROWS_AS(rollout(model, src, opt, rng), PreconditionError);
}

TEST_CASE("rollout determinism and rescoring") {
  const ModelConfig c = small_config();
  LevtModel model(c, 12);
  Rng srcs(8);
  for (int trial = 0; trial < 20; ++trial) {
    const TokenSeq src = random_source(srcs, c, 10);
    RolloutOptions opt;
    opt.tau = trial % 2 ? Real(0.5) : Real(1.5);
    Rng a(derive_seed(4, "rollout", std::uint64_t(trial))), b(derive_seed(4, "rollout", std::uint64_t(trial)));
    const Rollout r1 = rollout(model, src, opt, a);
    const Rollout r2 = rollout(model, src, opt, b);
    REQUIRE(r1.trace.steps.size() == r2.trace.steps.size());
    for (std::size_t i = 0; i < r1.trace.steps.size(); ++i) {
      CHECK(r1.trace.steps[i].action == r2.trace.steps[i].action);
      CHECK(r1.trace.steps[i].log_prob == r2.trace.steps[i].log_prob);
    }
    const auto rescored = rescore_trace(model, src, r1.trace, opt.tau);
    for (std::size_t i = 0; i < rescored.size(); ++i) {
      CHECK(std::abs(rescored[i] - r1.trace.steps[i].log_prob) < 1e-5);
    }
    double total = 0;
    for (const auto& s : r1.trace.steps) total += s.log_prob;
    CHECK(double(r1.total_log_prob().item()) == doctest::Approx(total).epsilon(1e-5));
  }
}

TEST_CASE("rollout clamps overlong insertions") {
  ModelConfig c = small_config();
  c.max_seq_len = 8;
  LevtModel model(c, 5);
  set_all(model.parameter("head.insert.weight").tensor, 0);
  Tensor ib = model.parameter("head.insert.bias").tensor;
  set_all(ib, -10);
  ib.mutable_values()[8] = 10;  // always ask for 8 placeholders
  RolloutOptions opt;
  Rng rng(1);
  const Rollout r = rollout(model, TokenSeq{5, 6}, opt, rng);
  CHECK(r.trace.clamped);
  for (const auto& s : r.trace.steps) CHECK(s.after.size() <= 8);
  const auto rescored = rescore_trace(model, TokenSeq{5, 6}, r.trace, opt.tau);
  for (std::size_t i = 0; i < rescored.size(); ++i) {
    CHECK(std::abs(rescored[i] - r.trace.steps[i].log_prob) < 1e-5);
  }
}

TEST_CASE("trace json") {
  LevtModel model(small_config(), 2);
  RolloutOptions opt;
  Rng rng(1);
  const Rollout r = rollout(model, TokenSeq{5, 6}, opt, rng);
  const auto j = to_json(r.trace);
  CHECK(j.at("steps").size() == 8);
  CHECK(j.at("final").get<TokenSeq>() == r.trace.final_hypothesis.tokens);
}
