#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "levrl/bleu.hpp"
#include "levrl/dataset.hpp"
#include "levrl/edit.hpp"
#include "levrl/model.hpp"
#include "levrl/optim.hpp"

LEVRL_NAMESPACE_BEGIN

// ---------------------------------------------------------------- temperature

enum class ScheduleKind { Constant, AnnealDown, AnnealUp };

ScheduleKind parse_schedule(std::string_view name);
std::string_view to_string(ScheduleKind kind);

/// tau_i = tau0 * exp(-i * log(tau0 / tauT) / T), floored (anneal-down) or
/// capped (anneal-up) at tauT. Constant ignores tauT.
struct TemperatureSchedule {
  ScheduleKind kind = ScheduleKind::Constant;
  double tau0 = 1.0;
  double tauT = 1.0;
  long total_steps = 1;

  /// Throws InvalidArgument for non-positive temperatures or a direction
  /// that contradicts the kind.
  void validate() const;
  /// Short label such as "constant(0.5)" or "anneal-down(1->0.1)".
  std::string label() const;
};

double temperature_at(const TemperatureSchedule& schedule, long step);

/// True when `taus` is a valid trajectory for `schedule`: constant, or
/// monotone in the right direction without crossing tauT.
bool trajectory_valid(const TemperatureSchedule& schedule, std::span<const double> taus);

// ---------------------------------------------------------------- baselines

/// Mean reward of the other k-1 samples. Throws InvalidArgument for k < 2.
double loo_baseline(std::span<const double> rewards, std::size_t i);

/// r_i - b_i for every sample, computed as (1/(k-1)) * sum_j (r_i - r_j) so
/// equal rewards give exact zeros.
std::vector<double> loo_advantages(std::span<const double> rewards);

/// -sum_i a_i * log_probs[i].
Tensor reinforce_surrogate(std::span<const Tensor> log_probs, std::span<const double> advantages);

// ---------------------------------------------------------------- diagnostics

enum class SlotOp { Delete, InsertReplace };

std::string_view to_string(SlotOp op);

struct Slot {
  int iteration = 1;
  SlotOp op = SlotOp::InsertReplace;
  bool operator==(const Slot&) const = default;
};

/// Merged edit slots of an n-iteration refinement: (1, ins+rep), then
/// (i, del), (i, ins+rep) for i = 2..n.
std::vector<Slot> merged_slots(int iterations);

/// Single-pass (Welford) mean and sample standard deviation.
class RunningStat {
 public:
  void push(double x);
  long count() const { return count_; }
  double mean() const { return mean_; }
  /// n-1 denominator; 0 with fewer than two values.
  double sd() const;

 private:
  long count_ = 0;
  double mean_ = 0;
  double m2_ = 0;
};

class AdvantageStats {
 public:
  explicit AdvantageStats(int iterations = 3);

  const std::vector<Slot>& slots() const { return slots_; }
  /// Throws InvalidArgument for a slot outside the configured iterations.
  void record(const Slot& slot, std::span<const double> advantages);
  const RunningStat& stat(const Slot& slot) const;

  /// "iteration,operation,sd" header plus one row per slot.
  std::string to_csv() const;
  nlohmann::json to_json() const;

 private:
  std::size_t index(const Slot& slot) const;

  std::vector<Slot> slots_;
  std::vector<RunningStat> stats_;
};

void record_advantage_stats(AdvantageStats& stats, const Slot& slot, std::span<const double> advantages);

// ---------------------------------------------------------------- updates

enum class Approach { Stepwise, Episodic };

Approach parse_approach(std::string_view name);
std::string_view to_string(Approach approach);

struct UpdateOptions {
  int k = 5;
  int iterations = 3;
  Real tau = 1;
  double lr = 0.01;
  double clip = 1.0;  // <= 0 disables
  BleuSmoothing smoothing = BleuSmoothing::AddOne;
};

struct UpdateReport {
  double mean_reward = 0;          // episodic: final BLEU; stepwise: mean step delta
  double mean_abs_advantage = 0;
  double grad_norm = 0;            // before clipping
  std::size_t clamped = 0;         // samples whose insertion had to be clamped
  std::size_t slots_touched = 0;   // stepwise: merged slots visited
};

/// k independent rollouts per source; every action log-prob in trajectory i
/// is weighted by its leave-one-out advantage. One optimizer step.
/// Rollout i of source b draws from derive_seed(stream_seed, "rollout", b*k+i).
UpdateReport episodic_update(LevtModel& model, std::span<const Example> batch, const UpdateOptions& options,
                             Optimizer& optimizer, std::uint64_t stream_seed);

/// Walks the merged slots; at each one draws k candidates, rewards them with
/// the BLEU change, weights only that slot's log-prob by its advantage, and
/// continues from a uniformly chosen candidate. One optimizer step.
/// Source b walks with derive_seed(stream_seed, "stepwise", b).
UpdateReport stepwise_update(LevtModel& model, std::span<const Example> batch, const UpdateOptions& options,
                             Optimizer& optimizer, std::uint64_t stream_seed, AdvantageStats* stats = nullptr);

// ---------------------------------------------------------------- fine-tuning

struct RlOptions {
  Approach approach = Approach::Episodic;
  TemperatureSchedule schedule;
  long steps = 5000;
  int batch = 8;
  UpdateOptions update;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  std::uint64_t seed = 1;
  long log_every = 50;
  long eval_every = 500;
  std::size_t eval_examples = 200;
  int threads = 1;
  std::filesystem::path checkpoint;     // final model; empty: not written
  std::filesystem::path metrics;        // per-step JSONL; empty: not written
  std::filesystem::path advantage_csv;  // AdvantageStats table; empty: not written
  std::filesystem::path traces;         // sampled traces JSONL; empty: not written
  long trace_every = 0;                 // one greedy-source trace every n steps
  std::ostream* log = nullptr;
};

struct RlResult {
  double initial_bleu = 0;
  double final_bleu = 0;
  std::vector<std::pair<long, double>> heldout;
  std::vector<double> taus;  // temperature used at each step
  AdvantageStats stats;
};

/// Fine-tunes `model` in place with a fresh optimizer.
RlResult rl_finetune(LevtModel& model, std::span<const Example> train, std::span<const Example> valid,
                     const RlOptions& options);

/// The five temperature settings compared by the sweep.
std::vector<TemperatureSchedule> sweep_schedules(long steps);

struct SweepRow {
  TemperatureSchedule schedule;
  double final_bleu = 0;
  bool trajectory_ok = false;
};

/// Fine-tunes a copy of `pretrained` under every sweep schedule. Each run
/// writes its reports under out_dir/<label>/; the comparison table goes to
/// out_dir/temperature_sweep.csv.
std::vector<SweepRow> run_sweep(const LevtModel& pretrained, std::span<const Example> train,
                                std::span<const Example> valid, const RlOptions& base,
                                const std::filesystem::path& out_dir);

std::string sweep_csv(std::span<const SweepRow> rows);

LEVRL_NAMESPACE_END
