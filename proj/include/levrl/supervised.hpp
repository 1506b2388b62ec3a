#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "levrl/dataset.hpp"
#include "levrl/model.hpp"
#include "levrl/optim.hpp"
#include "levrl/oracle.hpp"

LEVRL_NAMESPACE_BEGIN

/// How training states are produced from a reference.
struct RollInOptions {
  double drop_rate = 0.3;   // token dropout applied to the reference
  double null_rate = 0.2;   // start from [BOS, EOS]
  double self_rate = 0.5;   // model's own 1-iteration greedy output, once enabled
  double noise_rate = 0.1;  // per-gap chance of a spurious random token in dropout states
};

/// One training example with its expert targets for all three heads.
struct SupervisedItem {
  TokenSeq source;
  TokenSeq reference;
  Hypothesis rollin;        // delete-head input
  ExpertActions expert;     // targets computed on `rollin`
  Hypothesis insert_state;  // rollin after the expert deletions
  Hypothesis token_state;   // insert_state with the expert placeholders
};

/// Examples are kept unpadded; each contributes exactly its own positions.
struct SupervisedBatch {
  std::vector<SupervisedItem> items;

  /// Throws ShapeError when targets do not fit their states.
  void validate(const ModelConfig& config) const;
};

SupervisedItem make_item(std::span<const TokenId> source, std::span<const TokenId> reference, Hypothesis rollin,
                         std::size_t max_seq_len);

/// Draws a roll-in state for every example. Self roll-in is used only when
/// `allow_self` is set.
SupervisedBatch build_batch(const LevtModel& model, std::span<const Example> examples, const RollInOptions& rollin,
                            bool allow_self, Rng& rng);

struct LossReport {
  double delete_ce = 0;
  double insert_ce = 0;
  double token_ce = 0;
  double total = 0;
  double grad_norm = 0;
  std::size_t delete_positions = 0;
  std::size_t insert_positions = 0;
  std::size_t token_positions = 0;
};

struct SupervisedLoss {
  Tensor total;  // mean of the per-head mean cross-entropies that have positions
  LossReport report;
};

SupervisedLoss supervised_loss(const LevtModel& model, const SupervisedBatch& batch);

/// Loss, backward, optional clipping (clip <= 0 disables), one optimizer step.
LossReport supervised_step(LevtModel& model, const SupervisedBatch& batch, Optimizer& optimizer, double lr,
                           double clip = 1.0);

/// Corpus BLEU of greedy decodes against targets, spread over `threads`.
double heldout_bleu(const LevtModel& model, std::span<const Example> examples, int max_iters = 10, int threads = 1);

/// Greedy decodes of every source, in order.
std::vector<TokenSeq> decode_all(const LevtModel& model, std::span<const Example> examples, int max_iters = 10,
                                 int threads = 1);

struct PretrainOptions {
  long steps = 10000;
  int batch = 32;
  double lr = 3e-4;
  long warmup = 500;
  double clip = 1.0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  RollInOptions rollin;
  long self_rollin_after = 500;
  long log_every = 100;
  long eval_every = 1000;
  std::size_t eval_examples = 200;
  long checkpoint_every = 0;  // 0: only at the end
  std::uint64_t seed = 1;
  int threads = 1;
  std::filesystem::path checkpoint;  // empty: not written
  std::filesystem::path metrics;     // empty: not written
  /// Called after every step with (step, report).
  std::function<void(long, const LossReport&)> on_step;
  std::ostream* log = nullptr;  // one progress line per metrics record
};

struct TrainingState {
  long step = 0;
  Optimizer optimizer;
};

struct PretrainResult {
  long last_step = 0;
  std::vector<std::pair<long, double>> heldout;  // (step, corpus BLEU)
  double final_bleu = 0;
};

TrainingState fresh_training_state(const LevtModel& model, OptimizerKind kind);

/// Runs steps state.step+1 .. options.steps. Each step's batch and roll-in
/// depend only on (seed, step), so a resumed run repeats the original.
PretrainResult pretrain(LevtModel& model, TrainingState& state, std::span<const Example> train,
                        std::span<const Example> valid, const PretrainOptions& options);

/// Model, optimizer state and step in one checkpoint file.
void save_training_checkpoint(const std::filesystem::path& path, const LevtModel& model, const TrainingState& state,
                              const nlohmann::json& meta = nlohmann::json::object());

struct LoadedTraining {
  LevtModel model;
  TrainingState state;
  nlohmann::json meta;
};

LoadedTraining load_training_checkpoint(const std::filesystem::path& path, OptimizerKind kind);

LEVRL_NAMESPACE_END
