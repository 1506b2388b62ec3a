#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "levrl/checkpoint.hpp"
#include "levrl/hypothesis.hpp"
#include "levrl/optim.hpp"
#include "levrl/rng.hpp"
#include "levrl/tensor.hpp"

LEVRL_NAMESPACE_BEGIN

struct ModelConfig {
  int vocab_size = 64;
  int d_model = 64;
  int n_heads = 4;
  int n_encoder_layers = 2;
  int n_decoder_layers = 2;
  int ffn_dim = 128;
  int max_placeholders = 64;
  int max_seq_len = 64;

  /// Every violated constraint, empty when valid.
  std::vector<std::string> problems() const;
  /// Throws ConfigError listing every violated constraint.
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

/// Per-head scores for one hypothesis. Each field is only populated when the
/// corresponding head was evaluated.
struct PolicyOutput {
  Tensor delete_logits;  // [(len-2) x 2], class 1 = delete
  Tensor insert_logits;  // [(len-1) x (max_placeholders+1)], class k = k placeholders
  Tensor token_logits;   // [placeholders x vocab_size]
};

/// Edit policy: transformer encoder over the source, bidirectional decoder
/// over the current hypothesis, and three heads on the shared decoder trunk.
class LevtModel {
 public:
  LevtModel(const ModelConfig& config, std::uint64_t init_seed);

  LevtModel(const LevtModel&) = delete;
  LevtModel& operator=(const LevtModel&) = delete;
  LevtModel(LevtModel&&) = default;
  LevtModel& operator=(LevtModel&&) = default;

  /// Independent deep copy.
  LevtModel clone() const;

  const ModelConfig& config() const { return config_; }

  /// Source memory [len(source) x d_model].
  Tensor encode(std::span<const TokenId> source) const;
  /// Final decoder states [len(hyp) x d_model].
  Tensor decoder_states(const Hypothesis& hyp, const Tensor& memory) const;

  Tensor forward_delete(const Hypothesis& hyp, const Tensor& memory) const;
  Tensor forward_insert(const Hypothesis& hyp, const Tensor& memory) const;
  Tensor forward_replace(const Hypothesis& hyp, const Tensor& memory) const;

  // Heads applied to precomputed decoder states.
  Tensor delete_head(const Tensor& states) const;
  Tensor insert_head(const Tensor& states) const;
  Tensor token_head(const Tensor& states, const Hypothesis& hyp) const;

  std::span<Parameter> parameters() { return params_; }
  std::span<const Parameter> parameters() const { return params_; }
  Parameter& parameter(const std::string& name);
  std::size_t parameter_count() const;
  /// Trainable scalar count implied by the configuration alone.
  static std::size_t expected_parameter_count(const ModelConfig& config);

  CheckpointData to_checkpoint() const;
  /// Copies parameters from `data`; a differing model config is a ConfigError.
  void load_parameters(const CheckpointData& data);
  static LevtModel from_checkpoint(const CheckpointData& data);

  void save(const std::filesystem::path& path, const nlohmann::json& meta = nlohmann::json::object()) const;
  static LevtModel load(const std::filesystem::path& path);

 private:
  struct Linear {
    Tensor weight;
    Tensor bias;
  };
  struct Norm {
    Tensor gain;
    Tensor bias;
  };
  struct Attention {
    Linear query, key, value, out;
  };
  struct EncoderLayer {
    Norm attn_norm;
    Attention self_attn;
    Norm ffn_norm;
    Linear ffn_in, ffn_out;
  };
  struct DecoderLayer {
    Norm self_norm;
    Attention self_attn;
    Norm cross_norm;
    Attention cross_attn;
    Norm ffn_norm;
    Linear ffn_in, ffn_out;
  };

  Tensor add_param(const std::string& name, Shape shape, const std::vector<Real>& values);
  Linear make_linear(const std::string& name, int in, int out, Rng& rng);
  Norm make_norm(const std::string& name, int width);
  Attention make_attention(const std::string& name, Rng& rng);

  Tensor apply(const Linear& l, const Tensor& x) const;
  Tensor apply(const Norm& n, const Tensor& x) const;
  Tensor attend(const Attention& a, const Tensor& query_in, const Tensor& kv_in) const;
  Tensor feed_forward(const Linear& in, const Linear& out, const Tensor& x) const;
  Tensor positions(const Tensor& table, std::size_t len) const;

  ModelConfig config_;
  std::vector<Parameter> params_;
  Tensor token_embedding_;
  Tensor encoder_positions_;
  Tensor decoder_positions_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  Norm encoder_final_;
  Norm decoder_final_;
  Linear delete_out_;
  Linear insert_out_;
  Tensor token_bias_;
  Tensor token_mask_;  // constant: large negative on reserved ids
};

LEVRL_NAMESPACE_END
