#include "levrl/rl.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "levrl/jsonl.hpp"
#include "levrl/supervised.hpp"

LEVRL_NAMESPACE_BEGIN

// ---------------------------------------------------------------- temperature

ScheduleKind parse_schedule(std::string_view name) {
  if (name == "constant") return ScheduleKind::Constant;
  if (name == "anneal-down") return ScheduleKind::AnnealDown;
  if (name == "anneal-up") return ScheduleKind::AnnealUp;
  throw ConfigError("unknown schedule '" + std::string(name) + "' (expected constant|anneal-down|anneal-up)");
}

std::string_view to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::Constant:
      return "constant";
    case ScheduleKind::AnnealDown:
      return "anneal-down";
    case ScheduleKind::AnnealUp:
      return "anneal-up";
  }
  return "?";
}

void TemperatureSchedule::validate() const {
  if (!(tau0 > 0) || !std::isfinite(tau0)) throw InvalidArgument("schedule: tau0 must be positive");
  if (kind == ScheduleKind::Constant) return;
  if (!(tauT > 0) || !std::isfinite(tauT)) throw InvalidArgument("schedule: tauT must be positive");
  if (total_steps < 1) throw InvalidArgument("schedule: total steps must be at least 1");
  if (kind == ScheduleKind::AnnealDown && tau0 < tauT) throw InvalidArgument("anneal-down needs tau0 >= tauT");
  if (kind == ScheduleKind::AnnealUp && tau0 > tauT) throw InvalidArgument("anneal-up needs tau0 <= tauT");
}

namespace {

std::string number(double x) {
  std::ostringstream ss;
  ss << x;
  return ss.str();
}

}  // namespace

std::string TemperatureSchedule::label() const {
  if (kind == ScheduleKind::Constant) return "constant(" + number(tau0) + ")";
  return std::string(to_string(kind)) + "(" + number(tau0) + "->" + number(tauT) + ")";
}

double temperature_at(const TemperatureSchedule& schedule, long step) {
  schedule.validate();
  if (step < 0) throw InvalidArgument("temperature_at: negative step");
  if (schedule.kind == ScheduleKind::Constant) return schedule.tau0;
  const double log_ratio = std::log(schedule.tau0 / schedule.tauT);
  const double tau = schedule.tau0 * std::exp(-double(step) * log_ratio / double(schedule.total_steps));
  return schedule.kind == ScheduleKind::AnnealDown ? std::max(tau, schedule.tauT) : std::min(tau, schedule.tauT);
}

bool trajectory_valid(const TemperatureSchedule& schedule, std::span<const double> taus) {
  if (taus.empty()) return false;
  if (std::abs(taus.front() - schedule.tau0) > 1e-12) return false;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    const double t = taus[i];
    if (!(t > 0)) return false;
    switch (schedule.kind) {
      case ScheduleKind::Constant:
        if (t != schedule.tau0) return false;
        break;
      case ScheduleKind::AnnealDown:
        if (t < schedule.tauT || (i > 0 && t > taus[i - 1])) return false;
        break;
      case ScheduleKind::AnnealUp:
        if (t > schedule.tauT || (i > 0 && t < taus[i - 1])) return false;
        break;
    }
  }
  return true;
}

// ---------------------------------------------------------------- baselines

double loo_baseline(std::span<const double> rewards, std::size_t i) {
  if (rewards.size() < 2) throw InvalidArgument("loo_baseline: need at least 2 samples");
  if (i >= rewards.size()) throw InvalidArgument("loo_baseline: index out of range");
  double others = 0;
  for (std::size_t j = 0; j < rewards.size(); ++j) {
    if (j != i) others += rewards[j];
  }
  return others / double(rewards.size() - 1);
}

std::vector<double> loo_advantages(std::span<const double> rewards) {
  const std::size_t k = rewards.size();
  if (k < 2) throw InvalidArgument("loo_advantages: need at least 2 samples");
  std::vector<double> out(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    double acc = 0;
    for (std::size_t j = 0; j < k; ++j) acc += rewards[i] - rewards[j];
    out[i] = acc / double(k - 1);
  }
  return out;
}

Tensor reinforce_surrogate(std::span<const Tensor> log_probs, std::span<const double> advantages) {
  if (log_probs.size() != advantages.size()) throw ShapeError("reinforce_surrogate: size mismatch");
  Tensor total;
  for (std::size_t i = 0; i < log_probs.size(); ++i) {
    const Tensor term = scale(log_probs[i], Real(-advantages[i]));
    total = total.defined() ? add(total, term) : term;
  }
  return total.defined() ? total : Tensor::scalar(0);
}

// ---------------------------------------------------------------- diagnostics

std::string_view to_string(SlotOp op) { return op == SlotOp::Delete ? "delete" : "insert+replace"; }

std::vector<Slot> merged_slots(int iterations) {
  if (iterations < 1) throw InvalidArgument("merged_slots: at least one iteration required");
  std::vector<Slot> out{{1, SlotOp::InsertReplace}};
  for (int i = 2; i <= iterations; ++i) {
    out.push_back({i, SlotOp::Delete});
    out.push_back({i, SlotOp::InsertReplace});
  }
  return out;
}

void RunningStat::push(double x) {
  ++count_;
  const double delta = x - mean_;
  mean_ += delta / double(count_);
  m2_ += delta * (x - mean_);
}

double RunningStat::sd() const { return count_ < 2 ? 0.0 : std::sqrt(std::max(m2_, 0.0) / double(count_ - 1)); }

AdvantageStats::AdvantageStats(int iterations) : slots_(merged_slots(iterations)), stats_(slots_.size()) {}

std::size_t AdvantageStats::index(const Slot& slot) const {
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (slots_[i] == slot) return i;
  }
  throw InvalidArgument("AdvantageStats: no slot (" + std::to_string(slot.iteration) + ", " +
                        std::string(to_string(slot.op)) + ")");
}

void AdvantageStats::record(const Slot& slot, std::span<const double> advantages) {
  RunningStat& s = stats_[index(slot)];
  for (double a : advantages) s.push(a);
}

const RunningStat& AdvantageStats::stat(const Slot& slot) const { return stats_[index(slot)]; }

std::string AdvantageStats::to_csv() const {
  std::ostringstream out;
  out << "iteration,operation,sd\n" << std::setprecision(10);
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    out << slots_[i].iteration << ',' << to_string(slots_[i].op) << ',' << stats_[i].sd() << '\n';
  }
  return out.str();
}

nlohmann::json AdvantageStats::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    rows.push_back({{"iteration", slots_[i].iteration},
                    {"operation", to_string(slots_[i].op)},
                    {"count", stats_[i].count()},
                    {"mean", stats_[i].mean()},
                    {"sd", stats_[i].sd()}});
  }
  return rows;
}

void record_advantage_stats(AdvantageStats& stats, const Slot& slot, std::span<const double> advantages) {
  stats.record(slot, advantages);
}

// ---------------------------------------------------------------- updates

Approach parse_approach(std::string_view name) {
  if (name == "stepwise") return Approach::Stepwise;
  if (name == "episodic") return Approach::Episodic;
  throw ConfigError("unknown approach '" + std::string(name) + "' (expected stepwise|episodic)");
}

std::string_view to_string(Approach approach) { return approach == Approach::Stepwise ? "stepwise" : "episodic"; }

namespace {

void check_update(std::span<const Example> batch, const UpdateOptions& options) {
  if (batch.empty()) throw InvalidArgument("update: empty batch");
  if (options.k < 2) throw InvalidArgument("update: k must be at least 2");
  if (options.iterations < 1) throw InvalidArgument("update: at least one iteration required");
  if (!(options.tau > 0)) throw InvalidArgument("update: temperature must be positive");
  for (const auto& ex : batch) {
    if (ex.tgt.empty()) throw InvalidArgument("update: example without reference");
  }
}

double finish_update(LevtModel& model, Optimizer& optimizer, const UpdateOptions& options) {
  auto params = model.parameters();
  fill_missing_grads(params);
  const double norm = options.clip > 0 ? clip_grad_norm(params, options.clip) : grad_norm(params);
  optimizer.step(params, options.lr);
  return norm;
}

double mean_abs(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += std::abs(x);
  return v.empty() ? 0.0 : s / double(v.size());
}

}  // namespace

UpdateReport episodic_update(LevtModel& model, std::span<const Example> batch, const UpdateOptions& options,
                             Optimizer& optimizer, std::uint64_t stream_seed) {
  check_update(batch, options);
  zero_grads(model.parameters());
  UpdateReport report;
  const std::size_t k = std::size_t(options.k);
  RolloutOptions ro;
  ro.iterations = options.iterations;
  ro.tau = options.tau;
  double reward_sum = 0, adv_sum = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Tensor memory = model.encode(batch[b].src);
    std::vector<double> rewards(k);
    std::vector<Tensor> log_probs(k);
    for (std::size_t i = 0; i < k; ++i) {
      Rng rng(derive_seed(stream_seed, "rollout", b * k + i));
      Rollout r = rollout(model, memory, ro, rng);
      rewards[i] = sentence_bleu(r.trace.final_hypothesis.content(), batch[b].tgt, options.smoothing);
      log_probs[i] = r.total_log_prob();
      report.clamped += r.trace.clamped ? 1 : 0;
    }
    const auto adv = loo_advantages(rewards);
    for (double r : rewards) reward_sum += r;
    adv_sum += mean_abs(adv) * double(k);
    scale(reinforce_surrogate(log_probs, adv), Real(1.0 / double(batch.size()))).backward();
  }
  report.mean_reward = reward_sum / double(batch.size() * k);
  report.mean_abs_advantage = adv_sum / double(batch.size() * k);
  report.grad_norm = finish_update(model, optimizer, options);
  return report;
}

UpdateReport stepwise_update(LevtModel& model, std::span<const Example> batch, const UpdateOptions& options,
                             Optimizer& optimizer, std::uint64_t stream_seed, AdvantageStats* stats) {
  check_update(batch, options);
  zero_grads(model.parameters());
  const auto& cfg = model.config();
  const std::size_t k = std::size_t(options.k);
  const auto slots = merged_slots(options.iterations);
  UpdateReport report;
  double reward_sum = 0, adv_sum = 0;
  std::size_t samples = 0;

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const TokenSeq& ref = batch[b].tgt;
    Rng rng(derive_seed(stream_seed, "stepwise", b));
    const Tensor memory = model.encode(batch[b].src);
    Hypothesis state = Hypothesis::null();
    double state_bleu = 0;  // BLEU of the null string
    Tensor source_loss;

    for (const Slot& slot : slots) {
      std::vector<Hypothesis> after(k);
      std::vector<Tensor> log_probs(k);
      if (slot.op == SlotOp::Delete) {
        const EditDistribution dist(model.forward_delete(state, memory), EditKind::Delete, options.tau);
        for (std::size_t i = 0; i < k; ++i) {
          SampledEdit s = dist.sample(rng);
          after[i] = apply_delete(state, s.action.delete_mask);
          log_probs[i] = std::move(s.log_prob);
        }
      } else {
        const EditDistribution ins_dist(model.forward_insert(state, memory), EditKind::Insert, options.tau);
        for (std::size_t i = 0; i < k; ++i) {
          SampledEdit ins = ins_dist.sample(rng);
          if (clamp_insert_counts(ins.action.insert_counts, state.size(), std::size_t(cfg.max_seq_len))) {
            ins.log_prob = ins_dist.log_prob(ins.action);
            ++report.clamped;
          }
          const Hypothesis holes =
              apply_insert(state, ins.action.insert_counts, cfg.max_placeholders, std::size_t(cfg.max_seq_len));
          const EditDistribution rep_dist(model.forward_replace(holes, memory), EditKind::Replace, options.tau);
          SampledEdit rep = rep_dist.sample(rng);
          after[i] = apply_replace(holes, rep.action.replace_tokens);
          log_probs[i] = add(ins.log_prob, rep.log_prob);
        }
      }
      std::vector<double> bleu(k), rewards(k);
      for (std::size_t i = 0; i < k; ++i) {
        bleu[i] = sentence_bleu(after[i].content(), ref, options.smoothing);
        rewards[i] = bleu[i] - state_bleu;
      }
      const auto adv = loo_advantages(rewards);
      if (stats) stats->record(slot, adv);
      for (double r : rewards) reward_sum += r;
      adv_sum += mean_abs(adv) * double(k);
      samples += k;
      ++report.slots_touched;
      const Tensor term = reinforce_surrogate(log_probs, adv);
      source_loss = source_loss.defined() ? add(source_loss, term) : term;

      const std::size_t pick = rng.below(k);
      state = std::move(after[pick]);
      state_bleu = bleu[pick];
    }
    scale(source_loss, Real(1.0 / double(batch.size()))).backward();
  }
  report.mean_reward = reward_sum / double(samples);
  report.mean_abs_advantage = adv_sum / double(samples);
  report.grad_norm = finish_update(model, optimizer, options);
  return report;
}

// ---------------------------------------------------------------- fine-tuning

RlResult rl_finetune(LevtModel& model, std::span<const Example> train, std::span<const Example> valid,
                     const RlOptions& options) {
  if (train.empty()) throw InvalidArgument("rl_finetune: empty training set");
  if (options.batch < 1) throw InvalidArgument("rl_finetune: batch must be positive");
  if (options.steps < 1) throw InvalidArgument("rl_finetune: steps must be positive");
  options.schedule.validate();

  RlResult result;
  result.stats = AdvantageStats(options.update.iterations);
  // Optimizer state starts fresh for fine-tuning.
  Optimizer optimizer(options.optimizer, model.parameters());
  const auto eval_set = valid.subspan(0, std::min(valid.size(), options.eval_examples));
  JsonlWriter metrics, traces;
  if (!options.metrics.empty()) metrics = JsonlWriter(options.metrics);
  if (!options.traces.empty()) traces = JsonlWriter(options.traces);

  auto evaluate = [&]() { return eval_set.empty() ? 0.0 : heldout_bleu(model, eval_set, 10, options.threads); };
  result.initial_bleu = evaluate();
  result.heldout.emplace_back(0, result.initial_bleu);
  if (options.log) {
    *options.log << "rl " << to_string(options.approach) << " " << options.schedule.label() << " initial heldout_bleu "
                 << std::fixed << std::setprecision(2) << 100 * result.initial_bleu << std::defaultfloat << std::endl;
  }

  for (long step = 1; step <= options.steps; ++step) {
    const double tau = temperature_at(options.schedule, step - 1);
    result.taus.push_back(tau);
    Rng pick(derive_seed(options.seed, "rl-batch", std::uint64_t(step)));
    std::vector<Example> batch;
    for (int i = 0; i < options.batch; ++i) batch.push_back(train[pick.below(train.size())]);
    UpdateOptions update = options.update;
    update.tau = Real(tau);
    const std::uint64_t stream = derive_seed(options.seed, "rollout", std::uint64_t(step));
    const UpdateReport report = options.approach == Approach::Episodic
                                    ? episodic_update(model, batch, update, optimizer, stream)
                                    : stepwise_update(model, batch, update, optimizer, stream, &result.stats);

    nlohmann::json record{{"step", step},
                          {"tau", tau},
                          {"mean_reward", report.mean_reward},
                          {"mean_abs_advantage", report.mean_abs_advantage},
                          {"grad_norm", report.grad_norm},
                          {"clamped", report.clamped},
                          {"heldout_bleu", nullptr}};
    const bool last = step == options.steps;
    if (last || (options.eval_every > 0 && step % options.eval_every == 0)) {
      const double bleu = evaluate();
      result.heldout.emplace_back(step, bleu);
      record["heldout_bleu"] = bleu;
    }
    metrics.write(record);

    if (traces.is_open() && options.trace_every > 0 && step % options.trace_every == 0) {
      RolloutOptions ro;
      ro.iterations = options.update.iterations;
      ro.tau = Real(tau);
      ro.record_step_bleu = true;
      ro.reference = batch.front().tgt;
      ro.smoothing = options.update.smoothing;
      Rng rng(derive_seed(options.seed, "trace", std::uint64_t(step)));
      NoGradGuard no_grad;
      const Rollout r = rollout(model, batch.front().src, ro, rng);
      nlohmann::json j = to_json(r.trace);
      j["step"] = step;
      j["tau"] = tau;
      j["source"] = batch.front().src;
      j["reference"] = batch.front().tgt;
      j["reward"] = sentence_bleu(r.trace.final_hypothesis.content(), batch.front().tgt, options.update.smoothing);
      traces.write(j);
    }

    if (options.log && (last || (options.log_every > 0 && step % options.log_every == 0))) {
      *options.log << "rl step " << step << " tau " << std::setprecision(4) << tau << " reward " << std::fixed
                   << std::setprecision(4) << report.mean_reward << " |adv| " << report.mean_abs_advantage
                   << " grad " << report.grad_norm;
      if (!record["heldout_bleu"].is_null()) {
        *options.log << " heldout_bleu " << std::setprecision(2) << 100 * record["heldout_bleu"].get<double>();
      }
      *options.log << std::defaultfloat << std::endl;
    }
  }
  result.final_bleu = result.heldout.back().second;
  if (!options.checkpoint.empty()) {
    model.save(options.checkpoint, {{"trainer", "rl"},
                                    {"approach", to_string(options.approach)},
                                    {"schedule", options.schedule.label()},
                                    {"steps", options.steps},
                                    {"seed", options.seed}});
  }
  if (!options.advantage_csv.empty() && options.approach == Approach::Stepwise) {
    write_text_file(options.advantage_csv, result.stats.to_csv());
  }
  return result;
}

std::vector<TemperatureSchedule> sweep_schedules(long steps) {
  return {
      {ScheduleKind::Constant, 1.0, 1.0, steps},
      {ScheduleKind::Constant, 0.5, 0.5, steps},
      {ScheduleKind::Constant, 0.1, 0.1, steps},
      {ScheduleKind::AnnealDown, 1.0, 0.1, steps},
      {ScheduleKind::AnnealUp, 0.1, 1.0, steps},
  };
}

namespace {

std::string slug(const TemperatureSchedule& s) {
  std::string out(to_string(s.kind));
  out += "_" + number(s.tau0);
  if (s.kind != ScheduleKind::Constant) out += "_" + number(s.tauT);
  return out;
}

}  // namespace

std::vector<SweepRow> run_sweep(const LevtModel& pretrained, std::span<const Example> train,
                                std::span<const Example> valid, const RlOptions& base,
                                const std::filesystem::path& out_dir) {
  std::vector<SweepRow> rows;
  for (const auto& schedule : sweep_schedules(base.steps)) {
    LevtModel model = pretrained.clone();
    RlOptions opt = base;
    opt.schedule = schedule;
    const auto dir = out_dir / slug(schedule);
    opt.checkpoint = dir / "model.ckpt";
    opt.metrics = dir / "metrics.jsonl";
    opt.advantage_csv = dir / "advantage_sd.csv";
    opt.traces = base.traces.empty() ? std::filesystem::path{} : dir / "traces.jsonl";
    const RlResult r = rl_finetune(model, train, valid, opt);
    rows.push_back({schedule, r.final_bleu, trajectory_valid(schedule, r.taus)});
  }
  write_text_file(out_dir / "temperature_sweep.csv", sweep_csv(rows));
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::ostringstream out;
  out << "schedule,final_corpus_bleu\n";
  for (const auto& r : rows) out << r.schedule.label() << ',' << std::fixed << std::setprecision(2) << 100 * r.final_bleu << '\n';
  return out.str();
}

LEVRL_NAMESPACE_END
