#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "levrl/edit.hpp"
#include "levrl/model.hpp"

using namespace levrl;

namespace {

constexpr bool kDouble = sizeof(Real) == 8;
constexpr TokenId B = vocab::kBos, E = vocab::kEos, P = vocab::kPlh;

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 20;
  c.d_model = 16;
  c.n_heads = 4;
  c.n_encoder_layers = 2;
  c.n_decoder_layers = 2;
  c.ffn_dim = 24;
  c.max_placeholders = 6;
  c.max_seq_len = 16;
  return c;
}

bool same_values(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto x = a.values(), y = b.values();
  return std::equal(x.begin(), x.end(), y.begin());
}

}  // namespace

TEST_CASE("config validation and json round-trip") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(ModelConfig::from_json(c.to_json()) == c);
  ModelConfig bad;
  bad.d_model = 30;
  bad.n_heads = 4;
  bad.max_placeholders = 0;
  try {
    bad.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("divisible") != std::string::npos);
    CHECK(msg.find("max_placeholders") != std::string::npos);
  }
  auto j = c.to_json();
  j["dropout"] = 1;
  CHECK_THROWS_AS(ModelConfig::from_json(j), ConfigError);
}

TEST_CASE("parameter count audit") {
  for (const ModelConfig& c : {ModelConfig{}, small_config()}) {
    LevtModel model(c, 1);
    CHECK(model.parameter_count() == LevtModel::expected_parameter_count(c));
  }
  // Default config by hand: embeddings, positions, layers, norms, heads.
  const std::size_t d = 64, f = 128, V = 64, S = 64, P1 = 65;
  const std::size_t attn = 4 * (d * d + d), ffn = d * f + f + f * d + d;
  const std::size_t enc = 2 * 2 * d + attn + ffn, dec = 3 * 2 * d + 2 * attn + ffn;
  const std::size_t total = V * d + 2 * S * d + 2 * enc + 2 * dec + 2 * 2 * d + (d * 2 + 2) + (2 * d * P1 + P1) + V;
  CHECK(LevtModel::expected_parameter_count(ModelConfig{}) == total);
}

TEST_CASE("encode") {
  LevtModel model(small_config(), 2);
  const TokenSeq src{5, 6, 7, 8};
  const Tensor m1 = model.encode(src), m2 = model.encode(src);
  CHECK(m1.shape() == Shape{4, 16});
  CHECK(same_values(m1, m2));
  const Tensor permuted = model.encode(TokenSeq{8, 7, 6, 5});
  CHECK_FALSE(same_values(m1, permuted));
  // Same multiset, different positions: row for token 5 differs.
  const Tensor rotated = model.encode(TokenSeq{6, 7, 8, 5});
  bool differs = false;
  for (std::size_t c = 0; c < 16; ++c) differs |= m1.at(0, c) != rotated.at(3, c);
  CHECK(differs);
  CHECK_THROWS_AS(model.encode(TokenSeq{}), LengthError);
  CHECK_THROWS_AS(model.encode(TokenSeq(17, 5)), LengthError);
  CHECK_THROWS_AS(model.encode(TokenSeq{5, 20}), VocabularyError);
}

TEST_CASE("head shapes and phase errors") {
  const ModelConfig c = small_config();
  LevtModel model(c, 3);
  const Tensor mem = model.encode(TokenSeq{5, 6, 7});
  const Hypothesis null = Hypothesis::null();
  CHECK(model.forward_delete(null, mem).shape() == Shape{0, 2});
  CHECK(model.forward_insert(null, mem).shape() == Shape{1, 7});
  CHECK(model.forward_replace(null, mem).shape() == Shape{0, 20});

  const Hypothesis h{{B, 5, 6, 7, E}};
  CHECK(model.forward_delete(h, mem).shape() == Shape{3, 2});
  CHECK(model.forward_insert(h, mem).shape() == Shape{4, 7});

  const Hypothesis p{{B, P, 6, P, P, E}};
  CHECK(model.forward_replace(p, mem).shape() == Shape{3, 20});
  CHECK_THROWS_AS(model.forward_delete(p, mem), StateError);
  CHECK_THROWS_AS(model.forward_insert(p, mem), StateError);
  CHECK_THROWS_AS(model.forward_delete(Hypothesis{{5, 6, E}}, mem), StateError);

  const Tensor dprobs = softmax_tempered(model.forward_delete(h, mem), 1);
  for (std::size_t r = 0; r < 3; ++r) CHECK(dprobs.at(r, 0) + dprobs.at(r, 1) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("reserved ids are masked in the token distribution") {
  LevtModel model(small_config(), 4);
  const Tensor mem = model.encode(TokenSeq{5, 6});
  const Hypothesis p{{B, P, P, E}};
  for (Real tau : {Real(0.1), Real(1), Real(2)}) {
    const Tensor probs = softmax_tempered(model.forward_replace(p, mem), tau);
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      for (TokenId id : {vocab::kPad, vocab::kBos, vocab::kEos, vocab::kPlh, vocab::kUnk}) {
        CHECK(probs.at(r, std::size_t(id)) < 1e-8);
      }
    }
  }
}

TEST_CASE("forward passes are pure") {
  LevtModel model(small_config(), 5);
  const TokenSeq src{9, 8, 7};
  const Hypothesis h{{B, 5, 6, E}};
  const Tensor a = model.forward_insert(h, model.encode(src));
  model.forward_delete(h, model.encode(TokenSeq{5}));
  model.forward_replace(Hypothesis{{B, P, E}}, model.encode(src));
  const Tensor b = model.forward_insert(h, model.encode(src));
  CHECK(same_values(a, b));
}

TEST_CASE("every head sends gradient to the encoder") {
  const ModelConfig c = small_config();
  LevtModel model(c, 6);
  const TokenSeq src{5, 9, 7, 11};
  const Hypothesis plain{{B, 6, 7, E}};
  const Hypothesis holes{{B, P, 7, P, E}};
  const double eps = kDouble ? 1e-6 : 1e-2;
  // 32-bit FD through four layers only separates gross errors from noise.
  const double tol = kDouble ? 1e-5 : 0.25;

  using HeadFn = std::function<Tensor(const LevtModel&)>;
  const std::vector<std::pair<std::string, HeadFn>> heads{
      {"delete", [&](const LevtModel& m) { return m.forward_delete(plain, m.encode(src)); }},
      {"insert", [&](const LevtModel& m) { return m.forward_insert(plain, m.encode(src)); }},
      {"token", [&](const LevtModel& m) { return m.forward_replace(holes, m.encode(src)); }},
  };
  const std::vector<std::string> probes{"encoder.0.self_attn.value.weight", "encoder.1.ffn_in.weight",
                                        "embed.encoder_positions"};
  Rng rng(1);
  for (const auto& [head, fn] : heads) {
    CAPTURE(head);
    const Tensor probe = fn(model);
    std::vector<Real> w(probe.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      // Masked reserved-id logits are constant and huge; they would swamp the difference.
      w[i] = std::abs(probe.values()[i]) > 1e6 ? Real(0) : Real(rng.uniform() - 0.5);
    }
    const Tensor weights(probe.shape(), w);
    auto objective = [&]() {
      NoGradGuard g;
      const Tensor out = fn(model);
      double total = 0;
      for (std::size_t i = 0; i < w.size(); ++i) total += double(out.values()[i]) * double(w[i]);
      return total;
    };
    zero_grads(model.parameters());
    sum(mul(fn(model), weights)).backward();
    for (const auto& name : probes) {
      CAPTURE(name);
      Parameter& p = model.parameter(name);
      REQUIRE(p.tensor.has_grad());
      double analytic_norm = 0, diff_norm = 0, numeric_norm = 0;
      for (std::size_t i = 0; i < 12; ++i) {
        const std::size_t idx = (i * 37) % p.tensor.size();
        auto v = p.tensor.mutable_values();
        const Real saved = v[idx];
        v[idx] = Real(double(saved) + eps);
        const double up = objective();
        v[idx] = Real(double(saved) - eps);
        const double down = objective();
        const double step = double(Real(double(saved) + eps)) - double(Real(double(saved) - eps));
        v[idx] = saved;
        const double numeric = (up - down) / step;
        const double analytic = double(p.tensor.grad()[idx]);
        analytic_norm += analytic * analytic;
        numeric_norm += numeric * numeric;
        diff_norm += (analytic - numeric) * (analytic - numeric);
      }
      CHECK(std::sqrt(analytic_norm) > 0);
      CHECK(std::sqrt(diff_norm) / std::max(std::sqrt(analytic_norm), std::sqrt(numeric_norm)) < tol);
    }
  }
  zero_grads(model.parameters());
}

TEST_CASE("checkpoint round-trip and config mismatch") {
  const ModelConfig c = small_config();
  LevtModel model(c, 7);
  const auto path = std::filesystem::temp_directory_path() / "levrl_test_model.ckpt";
  model.save(path, {{"step", 3}});
  const LevtModel loaded = LevtModel::load(path);
  CHECK(loaded.config() == c);
  const Tensor mem = model.encode(TokenSeq{5, 6});
  const Hypothesis h{{B, 5, E}};
  CHECK(same_values(model.forward_insert(h, mem), loaded.forward_insert(h, loaded.encode(TokenSeq{5, 6}))));
  CHECK(read_checkpoint(path).header.at("meta").at("step") == 3);

  ModelConfig other = c;
  other.d_model = 8;
  other.n_heads = 2;
  LevtModel mismatched(other, 1);
  CHECK_THROWS_AS(mismatched.load_parameters(read_checkpoint(path)), ConfigError);
  std::filesystem::remove(path);

  LevtModel copy = model.clone();
  copy.parameter("head.token_bias").tensor.mutable_values()[6] += 1;
  CHECK(model.parameter("head.token_bias").tensor.values()[6] == 0);

  CHECK_THROWS_AS(LevtModel::load(std::filesystem::temp_directory_path() / "levrl_missing.ckpt"), IoError);
}

TEST_CASE("different init seeds give different parameters") {
  LevtModel a(small_config(), 1), b(small_config(), 2), c(small_config(), 1);
  CHECK_FALSE(same_values(a.parameter("embed.tokens").tensor, b.parameter("embed.tokens").tensor));
  CHECK(same_values(a.parameter("embed.tokens").tensor, c.parameter("embed.tokens").tensor));
}
