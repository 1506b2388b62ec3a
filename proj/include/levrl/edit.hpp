#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "levrl/bleu.hpp"
#include "levrl/hypothesis.hpp"
#include "levrl/model.hpp"
#include "levrl/rng.hpp"
#include "levrl/tensor.hpp"

LEVRL_NAMESPACE_BEGIN

enum class EditKind { Delete, Insert, Replace };

std::string_view to_string(EditKind kind);

/// One edit operation. Only the payload matching `kind` is populated.
struct EditAction {
  EditKind kind = EditKind::Delete;
  std::vector<std::uint8_t> delete_mask;  // per deletable position, 1 = delete
  std::vector<int> insert_counts;         // per gap
  TokenSeq replace_tokens;                // per placeholder

  static EditAction deletion(std::vector<std::uint8_t> mask);
  static EditAction insertion(std::vector<int> counts);
  static EditAction replacement(TokenSeq tokens);

  bool operator==(const EditAction&) const = default;
};

Hypothesis apply_delete(const Hypothesis& hyp, std::span<const std::uint8_t> mask);

/// Throws LengthError when a count exceeds `max_placeholders` or the result
/// would be longer than `max_seq_len`.
Hypothesis apply_insert(const Hypothesis& hyp, std::span<const int> counts, int max_placeholders,
                        std::size_t max_seq_len);

/// Throws ShapeError on a count mismatch and VocabularyError for reserved ids.
Hypothesis apply_replace(const Hypothesis& hyp, std::span<const TokenId> tokens);

Hypothesis apply_edit(const Hypothesis& hyp, const EditAction& action, const ModelConfig& limits);

/// Lowers counts from the rightmost gap until len + sum(counts) <= max_seq_len.
/// Returns true when anything was lowered.
bool clamp_insert_counts(std::vector<int>& counts, std::size_t hyp_len, std::size_t max_seq_len);

struct SampledEdit {
  EditAction action;
  Tensor log_prob;  // scalar, graph-connected when recording is on
};

/// Tempered per-row categorical distributions for one head's logits.
/// Rows are independent; the log-probability of an action is the sum over
/// its rows.
class EditDistribution {
 public:
  EditDistribution(const Tensor& logits, EditKind kind, Real tau);

  EditKind kind() const { return kind_; }
  std::size_t rows() const { return rows_; }

  SampledEdit sample(Rng& rng) const;
  Tensor log_prob(const EditAction& action) const;
  EditAction argmax() const;

 private:
  EditAction from_classes(std::vector<std::size_t> classes) const;

  EditKind kind_;
  std::size_t rows_ = 0;
  std::size_t classes_ = 0;
  Tensor log_probs_;
};

/// Samples each row from its tempered distribution.
SampledEdit sample_edit(const Tensor& logits, EditKind kind, Real tau, Rng& rng);
SampledEdit sample_edit(const PolicyOutput& policy, EditKind kind, Real tau, Rng& rng);
/// Sum of tempered log-probabilities of `action`'s components.
Tensor score_edit(const Tensor& logits, const EditAction& action, Real tau);
EditAction greedy_edit(const Tensor& logits, EditKind kind);

struct DecodeResult {
  Hypothesis hypothesis;
  int iterations = 0;
};

/// Argmax refinement from [BOS, EOS]: delete, insert, replace per iteration.
/// Stops when an iteration reproduces the previous iteration's output, or
/// after `max_iters` iterations.
DecodeResult greedy_decode(const LevtModel& model, std::span<const TokenId> source, int max_iters = 10);

struct TraceStep {
  int iteration = 0;
  EditKind kind = EditKind::Delete;
  Hypothesis before;
  EditAction action;
  double log_prob = 0;
  Hypothesis after;
  std::optional<double> bleu;  // after deletions and after replacements
};

struct EditTrace {
  std::vector<TraceStep> steps;
  Hypothesis final_hypothesis;
  /// Some sampled insertion had to be clamped to fit max_seq_len.
  bool clamped = false;
};

struct RolloutOptions {
  int iterations = 3;
  Real tau = 1;
  bool record_step_bleu = false;
  std::optional<TokenSeq> reference;
  BleuSmoothing smoothing = BleuSmoothing::AddOne;
};

struct Rollout {
  EditTrace trace;
  std::vector<Tensor> log_probs;  // one scalar per step

  /// Sum of all step log-probabilities (graph-connected).
  Tensor total_log_prob() const;
};

/// Samples `options.iterations` refinement iterations from the null string.
/// Iteration 1 has no delete phase; later iterations record delete, insert
/// and replace.
Rollout rollout(const LevtModel& model, const Tensor& memory, const RolloutOptions& options, Rng& rng);
Rollout rollout(const LevtModel& model, std::span<const TokenId> source, const RolloutOptions& options,
                Rng& rng);

/// Log-probability of every recorded action re-scored by the model at `tau`.
std::vector<double> rescore_trace(const LevtModel& model, std::span<const TokenId> source,
                                  const EditTrace& trace, Real tau);

nlohmann::json to_json(const EditAction& action);
nlohmann::json to_json(const EditTrace& trace);

LEVRL_NAMESPACE_END
