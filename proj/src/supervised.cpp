#include "levrl/supervised.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>
#include <string>
#include <thread>

#include "levrl/bleu.hpp"
#include "levrl/checkpoint.hpp"
#include "levrl/edit.hpp"
#include "levrl/jsonl.hpp"

LEVRL_NAMESPACE_BEGIN

namespace {

Hypothesis noisy_corruption(std::span<const TokenId> reference, const RollInOptions& opt, int vocab_size,
                            std::size_t max_seq_len, Rng& rng) {
  const Hypothesis dropped = corrupt(reference, rng, opt.drop_rate);
  if (opt.noise_rate <= 0) return dropped;
  TokenSeq content;
  const TokenSeq kept = dropped.content();
  const std::size_t content_ids = std::size_t(vocab_size - vocab::kFirstContent);
  for (std::size_t gap = 0; gap <= kept.size(); ++gap) {
    if (content.size() + 2 < max_seq_len && rng.bernoulli(opt.noise_rate)) {
      content.push_back(vocab::kFirstContent + TokenId(rng.below(content_ids)));
    }
    if (gap < kept.size()) content.push_back(kept[gap]);
  }
  if (content.size() + 2 > max_seq_len) content.resize(max_seq_len - 2);
  return Hypothesis::from_content(content);
}

std::vector<int> as_targets(std::span<const std::uint8_t> v) { return {v.begin(), v.end()}; }

}  // namespace

void SupervisedBatch::validate(const ModelConfig& config) const {
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    const std::string where = "batch item " + std::to_string(i) + ": ";
    if (it.rollin.size() < 2 || it.expert.delete_mask.size() != it.rollin.size() - 2) {
      throw ShapeError(where + "delete targets do not match the roll-in state");
    }
    if (it.expert.insert_counts.size() != it.insert_state.size() - 1) {
      throw ShapeError(where + "insert targets do not match the insertion state");
    }
    for (int c : it.expert.insert_counts) {
      if (c > config.max_placeholders) {
        throw ShapeError(where + "expert count " + std::to_string(c) + " exceeds max_placeholders");
      }
    }
    if (it.expert.fill_tokens.size() != it.token_state.placeholder_count()) {
      throw ShapeError(where + "fill targets do not match the placeholder count");
    }
    if (it.source.empty() || it.reference.empty()) throw ShapeError(where + "empty source or reference");
  }
}

SupervisedItem make_item(std::span<const TokenId> source, std::span<const TokenId> reference, Hypothesis rollin,
                         std::size_t max_seq_len) {
  SupervisedItem item;
  item.source.assign(source.begin(), source.end());
  item.reference.assign(reference.begin(), reference.end());
  item.expert = expert_actions(rollin, reference, max_seq_len);
  item.insert_state = apply_delete(rollin, item.expert.delete_mask);
  item.token_state = apply_insert(item.insert_state, item.expert.insert_counts, int(max_seq_len), max_seq_len);
  item.rollin = std::move(rollin);
  return item;
}

SupervisedBatch build_batch(const LevtModel& model, std::span<const Example> examples, const RollInOptions& rollin,
                            bool allow_self, Rng& rng) {
  const auto& cfg = model.config();
  const std::size_t max_len = std::size_t(cfg.max_seq_len);
  SupervisedBatch batch;
  batch.items.reserve(examples.size());
  for (const auto& ex : examples) {
    const double u = rng.uniform();
    Hypothesis state;
    if (allow_self && u < rollin.self_rate) {
      state = greedy_decode(model, ex.src, 1).hypothesis;
    } else if (u < (allow_self ? rollin.self_rate : 0.0) + rollin.null_rate) {
      state = Hypothesis::null();
    } else {
      state = noisy_corruption(ex.tgt, rollin, cfg.vocab_size, max_len, rng);
    }
    batch.items.push_back(make_item(ex.src, ex.tgt, std::move(state), max_len));
  }
  return batch;
}

SupervisedLoss supervised_loss(const LevtModel& model, const SupervisedBatch& batch) {
  if (batch.items.empty()) throw InvalidArgument("supervised_loss: empty batch");
  batch.validate(model.config());
  Tensor del_sum, ins_sum, tok_sum;
  SupervisedLoss out;
  auto accumulate = [](Tensor& acc, Tensor term) { acc = acc.defined() ? add(acc, term) : term; };
  for (const auto& it : batch.items) {
    const Tensor memory = model.encode(it.source);
    if (!it.expert.delete_mask.empty()) {
      const auto targets = as_targets(it.expert.delete_mask);
      accumulate(del_sum, cross_entropy(model.forward_delete(it.rollin, memory), targets, Reduction::Sum));
      out.report.delete_positions += targets.size();
    }
    accumulate(ins_sum, cross_entropy(model.forward_insert(it.insert_state, memory), it.expert.insert_counts,
                                      Reduction::Sum));
    out.report.insert_positions += it.expert.insert_counts.size();
    if (!it.expert.fill_tokens.empty()) {
      const std::vector<int> targets(it.expert.fill_tokens.begin(), it.expert.fill_tokens.end());
      accumulate(tok_sum, cross_entropy(model.forward_replace(it.token_state, memory), targets, Reduction::Sum));
      out.report.token_positions += targets.size();
    }
  }
  int heads = 0;
  Tensor total;
  auto finish = [&](const Tensor& sum_ce, std::size_t n, double& field) {
    if (n == 0) return;
    const Tensor mean_ce = scale(sum_ce, Real(1.0 / double(n)));
    field = double(mean_ce.item());
    accumulate(total, mean_ce);
    ++heads;
  };
  finish(del_sum, out.report.delete_positions, out.report.delete_ce);
  finish(ins_sum, out.report.insert_positions, out.report.insert_ce);
  finish(tok_sum, out.report.token_positions, out.report.token_ce);
  out.total = scale(total, Real(1.0 / heads));
  out.report.total = double(out.total.item());
  return out;
}

LossReport supervised_step(LevtModel& model, const SupervisedBatch& batch, Optimizer& optimizer, double lr,
                           double clip) {
  auto params = model.parameters();
  zero_grads(params);
  SupervisedLoss loss = supervised_loss(model, batch);
  loss.total.backward();
  fill_missing_grads(params);
  loss.report.grad_norm = clip > 0 ? clip_grad_norm(params, clip) : grad_norm(params);
  optimizer.step(params, lr);
  return loss.report;
}

std::vector<TokenSeq> decode_all(const LevtModel& model, std::span<const Example> examples, int max_iters,
                                 int threads) {
  std::vector<TokenSeq> out(examples.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) out[i] = greedy_decode(model, examples[i].src, max_iters).hypothesis.content();
  };
  const std::size_t n = examples.size();
  const std::size_t t = std::clamp<std::size_t>(std::size_t(std::max(threads, 1)), 1, std::max<std::size_t>(n, 1));
  if (t == 1) {
    work(0, n);
    return out;
  }
  std::vector<std::thread> pool;
  for (std::size_t k = 0; k < t; ++k) pool.emplace_back(work, k * n / t, (k + 1) * n / t);
  for (auto& th : pool) th.join();
  return out;
}

double heldout_bleu(const LevtModel& model, std::span<const Example> examples, int max_iters, int threads) {
  if (examples.empty()) throw InvalidArgument("heldout_bleu: no examples");
  const auto hyps = decode_all(model, examples, max_iters, threads);
  std::vector<TokenPair> pairs;
  pairs.reserve(hyps.size());
  for (std::size_t i = 0; i < hyps.size(); ++i) pairs.push_back({hyps[i], examples[i].tgt});
  return corpus_bleu(pairs);
}

TrainingState fresh_training_state(const LevtModel& model, OptimizerKind kind) {
  return {0, Optimizer(kind, model.parameters())};
}

void save_training_checkpoint(const std::filesystem::path& path, const LevtModel& model, const TrainingState& state,
                              const nlohmann::json& meta) {
  CheckpointData data = model.to_checkpoint();
  data.header["step"] = state.step;
  data.header["meta"] = meta;
  state.optimizer.save_state(data);
  write_checkpoint(path, data);
}

LoadedTraining load_training_checkpoint(const std::filesystem::path& path, OptimizerKind kind) {
  const CheckpointData data = read_checkpoint(path);
  LoadedTraining out{LevtModel::from_checkpoint(data), {}, data.header.value("meta", nlohmann::json::object())};
  out.state = fresh_training_state(out.model, kind);
  out.state.optimizer.load_state(data);
  out.state.step = data.header.at("step").get<long>();
  return out;
}

PretrainResult pretrain(LevtModel& model, TrainingState& state, std::span<const Example> train,
                        std::span<const Example> valid, const PretrainOptions& options) {
  if (train.empty()) throw InvalidArgument("pretrain: empty training set");
  if (options.batch < 1) throw InvalidArgument("pretrain: batch must be positive");
  if (state.optimizer.kind() != options.optimizer) throw ConfigError("pretrain: optimizer state kind mismatch");
  JsonlWriter metrics;
  if (!options.metrics.empty()) metrics = JsonlWriter(options.metrics, state.step > 0);
  const auto eval_set = valid.subspan(0, std::min(valid.size(), options.eval_examples));

  PretrainResult result;
  LossReport window;
  long window_steps = 0;
  auto meta = [&]() { return nlohmann::json{{"trainer", "pretrain"}, {"seed", options.seed}}; };

  for (long step = state.step + 1; step <= options.steps; ++step) {
    Rng rng(derive_seed(options.seed, "batch", std::uint64_t(step)));
    std::vector<Example> picked;
    picked.reserve(std::size_t(options.batch));
    for (int i = 0; i < options.batch; ++i) picked.push_back(train[rng.below(train.size())]);
    const SupervisedBatch batch = build_batch(model, picked, options.rollin, step > options.self_rollin_after, rng);
    const LossReport report =
        supervised_step(model, batch, state.optimizer, warmup_lr(options.lr, step, options.warmup), options.clip);
    state.step = step;
    result.last_step = step;
    if (options.on_step) options.on_step(step, report);

    window.delete_ce += report.delete_ce;
    window.insert_ce += report.insert_ce;
    window.token_ce += report.token_ce;
    ++window_steps;
    const bool last = step == options.steps;
    const bool eval_now = !eval_set.empty() && (last || (options.eval_every > 0 && step % options.eval_every == 0));
    if (last || eval_now || (options.log_every > 0 && step % options.log_every == 0)) {
      nlohmann::json record{{"step", step},
                            {"delete_ce", window.delete_ce / double(window_steps)},
                            {"insert_ce", window.insert_ce / double(window_steps)},
                            {"token_ce", window.token_ce / double(window_steps)},
                            {"heldout_bleu", nullptr}};
      if (eval_now) {
        const double bleu = heldout_bleu(model, eval_set, 10, options.threads);
        result.heldout.emplace_back(step, bleu);
        record["heldout_bleu"] = bleu;
      }
      metrics.write(record);
      if (options.log) {
        *options.log << "pretrain step " << step << " del " << std::fixed << std::setprecision(4)
                     << record["delete_ce"].get<double>() << " ins " << record["insert_ce"].get<double>() << " tok "
                     << record["token_ce"].get<double>();
        if (!record["heldout_bleu"].is_null()) {
          *options.log << " heldout_bleu " << std::setprecision(2) << 100 * record["heldout_bleu"].get<double>();
        }
        *options.log << std::defaultfloat << std::endl;
      }
      window = LossReport{};
      window_steps = 0;
    }
    if (!options.checkpoint.empty() && options.checkpoint_every > 0 && step % options.checkpoint_every == 0 && !last) {
      save_training_checkpoint(options.checkpoint, model, state, meta());
    }
  }
  if (!result.heldout.empty()) result.final_bleu = result.heldout.back().second;
  if (!options.checkpoint.empty()) save_training_checkpoint(options.checkpoint, model, state, meta());
  return result;
}

LEVRL_NAMESPACE_END
