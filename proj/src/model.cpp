#include "levrl/model.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

LEVRL_NAMESPACE_BEGIN

namespace {

constexpr Real kMaskedLogit = Real(-1e9);

std::vector<Real> uniform_values(std::size_t n, double bound, Rng& rng) {
  std::vector<Real> v(n);
  for (auto& x : v) x = Real((2.0 * rng.uniform() - 1.0) * bound);
  return v;
}

std::vector<Real> normal_values(std::size_t n, double stddev, Rng& rng) {
  std::vector<Real> v(n);
  for (auto& x : v) x = Real(rng.normal() * stddev);
  return v;
}

std::size_t linear_count(std::size_t in, std::size_t out) { return in * out + out; }

}  // namespace

// ---------------------------------------------------------------- config

std::vector<std::string> ModelConfig::problems() const {
  std::vector<std::string> problems;
  auto require = [&](bool ok, const std::string& what) {
    if (!ok) problems.push_back(what);
  };
  require(vocab_size > vocab::kFirstContent, "vocab_size must exceed the 5 reserved ids");
  require(d_model > 0, "d_model must be positive");
  require(n_heads > 0, "n_heads must be positive");
  require(n_heads > 0 && d_model % n_heads == 0, "d_model must be divisible by n_heads");
  require(n_encoder_layers >= 1, "n_encoder_layers must be at least 1");
  require(n_decoder_layers >= 1, "n_decoder_layers must be at least 1");
  require(ffn_dim > 0, "ffn_dim must be positive");
  require(max_placeholders >= 1, "max_placeholders must be at least 1");
  require(max_seq_len >= 3, "max_seq_len must be at least 3");
  return problems;
}

void ModelConfig::validate() const {
  const auto found = problems();
  if (!found.empty()) {
    std::ostringstream os;
    os << "invalid model config:";
    for (const auto& p : found) os << "\n  - " << p;
    throw ConfigError(os.str());
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size},         {"d_model", d_model},
          {"n_heads", n_heads},               {"n_encoder_layers", n_encoder_layers},
          {"n_decoder_layers", n_decoder_layers}, {"ffn_dim", ffn_dim},
          {"max_placeholders", max_placeholders}, {"max_seq_len", max_seq_len}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  const ModelConfig defaults;
  for (const auto& [key, value] : j.items()) {
    int* field = nullptr;
    if (key == "vocab_size") field = &c.vocab_size;
    else if (key == "d_model") field = &c.d_model;
    else if (key == "n_heads") field = &c.n_heads;
    else if (key == "n_encoder_layers") field = &c.n_encoder_layers;
    else if (key == "n_decoder_layers") field = &c.n_decoder_layers;
    else if (key == "ffn_dim") field = &c.ffn_dim;
    else if (key == "max_placeholders") field = &c.max_placeholders;
    else if (key == "max_seq_len") field = &c.max_seq_len;
    if (!field) throw ConfigError("unknown model config key '" + key + "'");
    if (!value.is_number_integer()) throw ConfigError("model config key '" + key + "' must be an integer");
    *field = value.get<int>();
  }
  return c;
}

// ---------------------------------------------------------------- construction

LevtModel::LevtModel(const ModelConfig& config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  Rng rng(init_seed);
  const int d = config_.d_model;
  const auto V = static_cast<std::size_t>(config_.vocab_size);
  const auto S = static_cast<std::size_t>(config_.max_seq_len);
  const double embed_std = 1.0 / std::sqrt(double(d));

  token_embedding_ = add_param("embed.tokens", {V, std::size_t(d)}, normal_values(V * d, embed_std, rng));
  encoder_positions_ = add_param("embed.encoder_positions", {S, std::size_t(d)}, normal_values(S * d, embed_std, rng));
  decoder_positions_ = add_param("embed.decoder_positions", {S, std::size_t(d)}, normal_values(S * d, embed_std, rng));

  for (int l = 0; l < config_.n_encoder_layers; ++l) {
    const std::string p = "encoder." + std::to_string(l) + ".";
    EncoderLayer layer;
    layer.attn_norm = make_norm(p + "attn_norm", d);
    layer.self_attn = make_attention(p + "self_attn", rng);
    layer.ffn_norm = make_norm(p + "ffn_norm", d);
    layer.ffn_in = make_linear(p + "ffn_in", d, config_.ffn_dim, rng);
    layer.ffn_out = make_linear(p + "ffn_out", config_.ffn_dim, d, rng);
    encoder_.push_back(std::move(layer));
  }
  encoder_final_ = make_norm("encoder.final_norm", d);

  for (int l = 0; l < config_.n_decoder_layers; ++l) {
    const std::string p = "decoder." + std::to_string(l) + ".";
    DecoderLayer layer;
    layer.self_norm = make_norm(p + "self_norm", d);
    layer.self_attn = make_attention(p + "self_attn", rng);
    layer.cross_norm = make_norm(p + "cross_norm", d);
    layer.cross_attn = make_attention(p + "cross_attn", rng);
    layer.ffn_norm = make_norm(p + "ffn_norm", d);
    layer.ffn_in = make_linear(p + "ffn_in", d, config_.ffn_dim, rng);
    layer.ffn_out = make_linear(p + "ffn_out", config_.ffn_dim, d, rng);
    decoder_.push_back(std::move(layer));
  }
  decoder_final_ = make_norm("decoder.final_norm", d);

  delete_out_ = make_linear("head.delete", d, 2, rng);
  insert_out_ = make_linear("head.insert", 2 * d, config_.max_placeholders + 1, rng);
  token_bias_ = add_param("head.token_bias", {V}, std::vector<Real>(V, Real(0)));

  std::vector<Real> mask(V, Real(0));
  for (TokenId id = 0; id < vocab::kFirstContent; ++id) mask[std::size_t(id)] = kMaskedLogit;
  token_mask_ = Tensor({V}, std::move(mask));
}

Tensor LevtModel::add_param(const std::string& name, Shape shape, const std::vector<Real>& values) {
  for (const auto& p : params_) {
    if (p.name == name) throw InvalidArgument("duplicate parameter name '" + name + "'");
  }
  Tensor t(std::move(shape), values, true);
  params_.push_back({name, t});
  return t;
}

LevtModel::Linear LevtModel::make_linear(const std::string& name, int in, int out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(double(in));
  Linear l;
  l.weight = add_param(name + ".weight", {std::size_t(in), std::size_t(out)},
                       uniform_values(std::size_t(in) * std::size_t(out), bound, rng));
  l.bias = add_param(name + ".bias", {std::size_t(out)}, std::vector<Real>(std::size_t(out), Real(0)));
  return l;
}

LevtModel::Norm LevtModel::make_norm(const std::string& name, int width) {
  Norm n;
  n.gain = add_param(name + ".gain", {std::size_t(width)}, std::vector<Real>(std::size_t(width), Real(1)));
  n.bias = add_param(name + ".bias", {std::size_t(width)}, std::vector<Real>(std::size_t(width), Real(0)));
  return n;
}

LevtModel::Attention LevtModel::make_attention(const std::string& name, Rng& rng) {
  const int d = config_.d_model;
  Attention a;
  a.query = make_linear(name + ".query", d, d, rng);
  a.key = make_linear(name + ".key", d, d, rng);
  a.value = make_linear(name + ".value", d, d, rng);
  a.out = make_linear(name + ".out", d, d, rng);
  return a;
}

LevtModel LevtModel::clone() const { return from_checkpoint(to_checkpoint()); }

// ---------------------------------------------------------------- forward

Tensor LevtModel::apply(const Linear& l, const Tensor& x) const { return linear(x, l.weight, l.bias); }

Tensor LevtModel::apply(const Norm& n, const Tensor& x) const { return layer_norm(x, n.gain, n.bias); }

Tensor LevtModel::attend(const Attention& a, const Tensor& query_in, const Tensor& kv_in) const {
  Tensor mixed = multi_head_attention(apply(a.query, query_in), apply(a.key, kv_in), apply(a.value, kv_in),
                                      std::size_t(config_.n_heads));
  return apply(a.out, mixed);
}

Tensor LevtModel::feed_forward(const Linear& in, const Linear& out, const Tensor& x) const {
  return apply(out, relu(apply(in, x)));
}

Tensor LevtModel::positions(const Tensor& table, std::size_t len) const { return slice_rows(table, 0, len); }

Tensor LevtModel::encode(std::span<const TokenId> source) const {
  if (source.empty()) throw LengthError("encode: empty source");
  if (source.size() > std::size_t(config_.max_seq_len)) {
    throw LengthError("encode: source length " + std::to_string(source.size()) + " exceeds max_seq_len " +
                      std::to_string(config_.max_seq_len));
  }
  for (TokenId id : source) {
    if (id < 0 || id >= config_.vocab_size) {
      throw VocabularyError("encode: token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(config_.vocab_size));
    }
  }
  Tensor x = add(embedding(token_embedding_, source), positions(encoder_positions_, source.size()));
  for (const auto& layer : encoder_) {
    Tensor h = apply(layer.attn_norm, x);
    x = add(x, attend(layer.self_attn, h, h));
    x = add(x, feed_forward(layer.ffn_in, layer.ffn_out, apply(layer.ffn_norm, x)));
  }
  return apply(encoder_final_, x);
}

Tensor LevtModel::decoder_states(const Hypothesis& hyp, const Tensor& memory) const {
  validate_hypothesis(hyp, std::size_t(config_.max_seq_len), std::size_t(config_.vocab_size));
  if (!memory.defined() || memory.rank() != 2 || memory.cols() != std::size_t(config_.d_model)) {
    throw ShapeError("decoder_states: memory must be [len x d_model]");
  }
  Tensor y = add(embedding(token_embedding_, hyp.tokens), positions(decoder_positions_, hyp.size()));
  for (const auto& layer : decoder_) {
    Tensor h = apply(layer.self_norm, y);
    y = add(y, attend(layer.self_attn, h, h));
    y = add(y, attend(layer.cross_attn, apply(layer.cross_norm, y), memory));
    y = add(y, feed_forward(layer.ffn_in, layer.ffn_out, apply(layer.ffn_norm, y)));
  }
  return apply(decoder_final_, y);
}

Tensor LevtModel::delete_head(const Tensor& states) const {
  return apply(delete_out_, slice_rows(states, 1, states.rows() - 1));
}

Tensor LevtModel::insert_head(const Tensor& states) const {
  const std::size_t len = states.rows();
  return apply(insert_out_, concat_cols(slice_rows(states, 0, len - 1), slice_rows(states, 1, len)));
}

Tensor LevtModel::token_head(const Tensor& states, const Hypothesis& hyp) const {
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    if (hyp.tokens[i] == vocab::kPlh) slots.push_back(i);
  }
  Tensor picked = gather_rows(states, slots);
  Tensor logits = add_row(matmul(picked, transpose(token_embedding_)), token_bias_);
  return add_row(logits, token_mask_);
}

Tensor LevtModel::forward_delete(const Hypothesis& hyp, const Tensor& memory) const {
  if (hyp.has_placeholders()) throw StateError("forward_delete: hypothesis contains placeholders");
  return delete_head(decoder_states(hyp, memory));
}

Tensor LevtModel::forward_insert(const Hypothesis& hyp, const Tensor& memory) const {
  if (hyp.has_placeholders()) throw StateError("forward_insert: hypothesis contains placeholders");
  return insert_head(decoder_states(hyp, memory));
}

Tensor LevtModel::forward_replace(const Hypothesis& hyp, const Tensor& memory) const {
  return token_head(decoder_states(hyp, memory), hyp);
}

// ---------------------------------------------------------------- parameters / checkpoint

Parameter& LevtModel::parameter(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw InvalidArgument("no parameter named '" + name + "'");
}

std::size_t LevtModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

std::size_t LevtModel::expected_parameter_count(const ModelConfig& c) {
  const std::size_t d = std::size_t(c.d_model), f = std::size_t(c.ffn_dim);
  const std::size_t V = std::size_t(c.vocab_size), S = std::size_t(c.max_seq_len);
  const std::size_t norm = 2 * d;
  const std::size_t attention = 4 * linear_count(d, d);
  const std::size_t ffn = linear_count(d, f) + linear_count(f, d);
  const std::size_t encoder_layer = 2 * norm + attention + ffn;
  const std::size_t decoder_layer = 3 * norm + 2 * attention + ffn;
  return V * d + 2 * S * d + std::size_t(c.n_encoder_layers) * encoder_layer +
         std::size_t(c.n_decoder_layers) * decoder_layer + 2 * norm + linear_count(d, 2) +
         linear_count(2 * d, std::size_t(c.max_placeholders) + 1) + V;
}

CheckpointData LevtModel::to_checkpoint() const {
  CheckpointData data;
  data.header["format"] = "levrl-model";
  data.header["model_config"] = config_.to_json();
  for (const auto& p : params_) {
    auto v = p.tensor.values();
    data.arrays.push_back({p.name, p.tensor.shape(), std::vector<double>(v.begin(), v.end()), native_storage()});
  }
  return data;
}

void LevtModel::load_parameters(const CheckpointData& data) {
  if (!data.header.contains("model_config")) throw ConfigError("checkpoint has no model config");
  const ModelConfig stored = ModelConfig::from_json(data.header.at("model_config"));
  if (!(stored == config_)) {
    throw ConfigError("checkpoint model config " + stored.to_json().dump() + " does not match " +
                      config_.to_json().dump());
  }
  for (auto& p : params_) {
    const NamedArray* a = data.find(p.name);
    if (!a) throw ConfigError("checkpoint is missing parameter '" + p.name + "'");
    if (a->shape != p.tensor.shape()) {
      throw ShapeError("checkpoint parameter '" + p.name + "' has shape " + shape_to_string(a->shape));
    }
    auto values = p.tensor.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = Real(a->values[i]);
    p.tensor.zero_grad();
  }
}

LevtModel LevtModel::from_checkpoint(const CheckpointData& data) {
  if (!data.header.contains("model_config")) throw ConfigError("checkpoint has no model config");
  LevtModel model(ModelConfig::from_json(data.header.at("model_config")), 0);
  model.load_parameters(data);
  return model;
}

void LevtModel::save(const std::filesystem::path& path, const nlohmann::json& meta) const {
  CheckpointData data = to_checkpoint();
  data.header["meta"] = meta;
  write_checkpoint(path, data);
}

LevtModel LevtModel::load(const std::filesystem::path& path) { return from_checkpoint(read_checkpoint(path)); }

LEVRL_NAMESPACE_END
