#include "levrl/edit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

LEVRL_NAMESPACE_BEGIN

std::string_view to_string(EditKind kind) {
  switch (kind) {
    case EditKind::Delete:
      return "delete";
    case EditKind::Insert:
      return "insert";
    case EditKind::Replace:
      return "replace";
  }
  return "?";
}

EditAction EditAction::deletion(std::vector<std::uint8_t> mask) {
  EditAction a;
  a.kind = EditKind::Delete;
  a.delete_mask = std::move(mask);
  return a;
}

EditAction EditAction::insertion(std::vector<int> counts) {
  EditAction a;
  a.kind = EditKind::Insert;
  a.insert_counts = std::move(counts);
  return a;
}

EditAction EditAction::replacement(TokenSeq tokens) {
  EditAction a;
  a.kind = EditKind::Replace;
  a.replace_tokens = std::move(tokens);
  return a;
}

// ---------------------------------------------------------------- pure edits

Hypothesis apply_delete(const Hypothesis& hyp, std::span<const std::uint8_t> mask) {
  if (hyp.has_placeholders()) throw StateError("apply_delete: hypothesis contains placeholders");
  if (hyp.size() < 2) throw StateError("apply_delete: hypothesis lacks sentinels");
  if (mask.size() != hyp.size() - 2) {
    throw ShapeError("apply_delete: mask of length " + std::to_string(mask.size()) + " for " +
                     std::to_string(hyp.size() - 2) + " deletable positions");
  }
  Hypothesis out;
  out.tokens.reserve(hyp.size());
  out.tokens.push_back(hyp.tokens.front());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) out.tokens.push_back(hyp.tokens[i + 1]);
  }
  out.tokens.push_back(hyp.tokens.back());
  return out;
}

Hypothesis apply_insert(const Hypothesis& hyp, std::span<const int> counts, int max_placeholders,
                        std::size_t max_seq_len) {
  if (hyp.has_placeholders()) throw StateError("apply_insert: hypothesis already contains placeholders");
  if (hyp.size() < 2) throw StateError("apply_insert: hypothesis lacks sentinels");
  if (counts.size() != hyp.size() - 1) {
    throw ShapeError("apply_insert: " + std::to_string(counts.size()) + " counts for " +
                     std::to_string(hyp.size() - 1) + " gaps");
  }
  std::size_t added = 0;
  for (int c : counts) {
    if (c < 0 || c > max_placeholders) {
      throw LengthError("apply_insert: count " + std::to_string(c) + " outside [0, " +
                        std::to_string(max_placeholders) + "]");
    }
    added += std::size_t(c);
  }
  if (hyp.size() + added > max_seq_len) {
    throw LengthError("apply_insert: result length " + std::to_string(hyp.size() + added) + " exceeds " +
                      std::to_string(max_seq_len));
  }
  Hypothesis out;
  out.tokens.reserve(hyp.size() + added);
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    out.tokens.push_back(hyp.tokens[i]);
    if (i < counts.size()) out.tokens.insert(out.tokens.end(), std::size_t(counts[i]), vocab::kPlh);
  }
  return out;
}

Hypothesis apply_replace(const Hypothesis& hyp, std::span<const TokenId> tokens) {
  const std::size_t slots = hyp.placeholder_count();
  if (tokens.size() != slots) {
    throw ShapeError("apply_replace: " + std::to_string(tokens.size()) + " tokens for " + std::to_string(slots) +
                     " placeholders");
  }
  for (TokenId t : tokens) {
    if (t < 0 || vocab::is_reserved(t)) {
      throw VocabularyError("apply_replace: cannot fill a placeholder with reserved id " + std::to_string(t));
    }
  }
  Hypothesis out = hyp;
  std::size_t next = 0;
  for (auto& t : out.tokens) {
    if (t == vocab::kPlh) t = tokens[next++];
  }
  return out;
}

Hypothesis apply_edit(const Hypothesis& hyp, const EditAction& action, const ModelConfig& limits) {
  switch (action.kind) {
    case EditKind::Delete:
      return apply_delete(hyp, action.delete_mask);
    case EditKind::Insert:
      return apply_insert(hyp, action.insert_counts, limits.max_placeholders, std::size_t(limits.max_seq_len));
    case EditKind::Replace:
      return apply_replace(hyp, action.replace_tokens);
  }
  throw InvalidArgument("apply_edit: unknown edit kind");
}

bool clamp_insert_counts(std::vector<int>& counts, std::size_t hyp_len, std::size_t max_seq_len) {
  std::size_t total = hyp_len;
  for (int c : counts) total += std::size_t(std::max(c, 0));
  bool clamped = false;
  for (auto it = counts.rbegin(); it != counts.rend() && total > max_seq_len; ++it) {
    const std::size_t cut = std::min<std::size_t>(std::size_t(*it), total - max_seq_len);
    if (cut == 0) continue;
    *it -= int(cut);
    total -= cut;
    clamped = true;
  }
  return clamped;
}

// ---------------------------------------------------------------- distributions

EditDistribution::EditDistribution(const Tensor& logits, EditKind kind, Real tau) : kind_(kind) {
  if (!logits.defined() || logits.rank() != 2) throw ShapeError("EditDistribution: logits must be rank 2");
  if (!(tau > 0)) throw InvalidArgument("EditDistribution: temperature must be positive");
  rows_ = logits.rows();
  classes_ = logits.cols();
  if (kind == EditKind::Delete && classes_ != 2) throw ShapeError("EditDistribution: delete head needs 2 classes");
  log_probs_ = log_softmax_tempered(logits, tau);
}

EditAction EditDistribution::from_classes(std::vector<std::size_t> classes) const {
  switch (kind_) {
    case EditKind::Delete: {
      std::vector<std::uint8_t> mask(classes.begin(), classes.end());
      return EditAction::deletion(std::move(mask));
    }
    case EditKind::Insert: {
      std::vector<int> counts(classes.begin(), classes.end());
      return EditAction::insertion(std::move(counts));
    }
    case EditKind::Replace: {
      TokenSeq tokens(classes.begin(), classes.end());
      return EditAction::replacement(std::move(tokens));
    }
  }
  throw InvalidArgument("unknown edit kind");
}

SampledEdit EditDistribution::sample(Rng& rng) const {
  std::vector<std::size_t> classes(rows_);
  std::vector<double> weights(classes_);
  const auto lp = log_probs_.values();
  for (std::size_t i = 0; i < rows_; ++i) {
    for (std::size_t j = 0; j < classes_; ++j) weights[j] = std::exp(double(lp[i * classes_ + j]));
    classes[i] = rng.categorical(weights);
  }
  EditAction action = from_classes(std::move(classes));
  Tensor lp_sum = log_prob(action);
  return {std::move(action), std::move(lp_sum)};
}

Tensor EditDistribution::log_prob(const EditAction& action) const {
  if (action.kind != kind_) throw InvalidArgument("log_prob: action kind does not match the distribution");
  std::vector<std::size_t> cols;
  switch (kind_) {
    case EditKind::Delete:
      cols.assign(action.delete_mask.begin(), action.delete_mask.end());
      break;
    case EditKind::Insert:
      for (int c : action.insert_counts) {
        if (c < 0) throw InvalidArgument("log_prob: negative insert count");
        cols.push_back(std::size_t(c));
      }
      break;
    case EditKind::Replace:
      for (TokenId t : action.replace_tokens) {
        if (t < 0) throw VocabularyError("log_prob: negative token id");
        cols.push_back(std::size_t(t));
      }
      break;
  }
  if (cols.size() != rows_) {
    throw ShapeError("log_prob: action has " + std::to_string(cols.size()) + " components for " +
                     std::to_string(rows_) + " rows");
  }
  if (rows_ == 0) return Tensor::scalar(0);
  std::vector<std::size_t> rows(rows_);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return sum(select(log_probs_, rows, cols));
}

EditAction EditDistribution::argmax() const {
  std::vector<std::size_t> classes(rows_);
  const auto lp = log_probs_.values();
  for (std::size_t i = 0; i < rows_; ++i) {
    const Real* row = lp.data() + i * classes_;
    classes[i] = std::size_t(std::max_element(row, row + classes_) - row);
  }
  return from_classes(std::move(classes));
}

SampledEdit sample_edit(const Tensor& logits, EditKind kind, Real tau, Rng& rng) {
  return EditDistribution(logits, kind, tau).sample(rng);
}

SampledEdit sample_edit(const PolicyOutput& policy, EditKind kind, Real tau, Rng& rng) {
  switch (kind) {
    case EditKind::Delete:
      return sample_edit(policy.delete_logits, kind, tau, rng);
    case EditKind::Insert:
      return sample_edit(policy.insert_logits, kind, tau, rng);
    case EditKind::Replace:
      return sample_edit(policy.token_logits, kind, tau, rng);
  }
  throw InvalidArgument("sample_edit: unknown edit kind");
}

Tensor score_edit(const Tensor& logits, const EditAction& action, Real tau) {
  return EditDistribution(logits, action.kind, tau).log_prob(action);
}

EditAction greedy_edit(const Tensor& logits, EditKind kind) {
  return EditDistribution(logits, kind, Real(1)).argmax();
}

// ---------------------------------------------------------------- decoding

DecodeResult greedy_decode(const LevtModel& model, std::span<const TokenId> source, int max_iters) {
  if (max_iters < 1) throw InvalidArgument("greedy_decode: max_iters must be at least 1");
  NoGradGuard no_grad;
  const auto& cfg = model.config();
  const Tensor memory = model.encode(source);
  Hypothesis current = Hypothesis::null();
  DecodeResult result;
  for (int iter = 1; iter <= max_iters; ++iter) {
    Hypothesis next = current;
    if (next.size() > 2) {
      next = apply_delete(next, greedy_edit(model.forward_delete(next, memory), EditKind::Delete).delete_mask);
    }
    EditAction insert = greedy_edit(model.forward_insert(next, memory), EditKind::Insert);
    clamp_insert_counts(insert.insert_counts, next.size(), std::size_t(cfg.max_seq_len));
    next = apply_insert(next, insert.insert_counts, cfg.max_placeholders, std::size_t(cfg.max_seq_len));
    if (next.has_placeholders()) {
      next = apply_replace(next, greedy_edit(model.forward_replace(next, memory), EditKind::Replace).replace_tokens);
    }
    result.iterations = iter;
    const bool fixed_point = iter > 1 && next == current;
    current = std::move(next);
    if (fixed_point) break;
  }
  result.hypothesis = std::move(current);
  return result;
}

Tensor Rollout::total_log_prob() const {
  Tensor total;
  for (const auto& lp : log_probs) total = total.defined() ? add(total, lp) : lp;
  return total.defined() ? total : Tensor::scalar(0);
}

Rollout rollout(const LevtModel& model, const Tensor& memory, const RolloutOptions& options, Rng& rng) {
  if (options.iterations < 1) throw InvalidArgument("rollout: at least one iteration required");
  if (options.record_step_bleu && !options.reference) {
    throw PreconditionError("rollout: step BLEU requested without a reference");
  }
  const auto& cfg = model.config();
  Rollout out;
  Hypothesis state = Hypothesis::null();

  auto record = [&](int iteration, EditKind kind, const Hypothesis& before, EditAction action, Tensor lp,
                    const Hypothesis& after) {
    TraceStep step;
    step.iteration = iteration;
    step.kind = kind;
    step.before = before;
    step.action = std::move(action);
    step.log_prob = double(lp.item());
    step.after = after;
    if (options.record_step_bleu && kind != EditKind::Insert) {
      step.bleu = sentence_bleu(after.content(), *options.reference, options.smoothing);
    }
    out.trace.steps.push_back(std::move(step));
    out.log_probs.push_back(std::move(lp));
  };

  for (int iter = 1; iter <= options.iterations; ++iter) {
    if (iter > 1) {
      EditDistribution dist(model.forward_delete(state, memory), EditKind::Delete, options.tau);
      SampledEdit del = dist.sample(rng);
      Hypothesis after = apply_delete(state, del.action.delete_mask);
      record(iter, EditKind::Delete, state, std::move(del.action), std::move(del.log_prob), after);
      state = std::move(after);
    }
    {
      EditDistribution dist(model.forward_insert(state, memory), EditKind::Insert, options.tau);
      SampledEdit ins = dist.sample(rng);
      if (clamp_insert_counts(ins.action.insert_counts, state.size(), std::size_t(cfg.max_seq_len))) {
        ins.log_prob = dist.log_prob(ins.action);
        out.trace.clamped = true;
      }
      Hypothesis after =
          apply_insert(state, ins.action.insert_counts, cfg.max_placeholders, std::size_t(cfg.max_seq_len));
      record(iter, EditKind::Insert, state, std::move(ins.action), std::move(ins.log_prob), after);
      state = std::move(after);
    }
    {
      EditDistribution dist(model.forward_replace(state, memory), EditKind::Replace, options.tau);
      SampledEdit rep = dist.sample(rng);
      Hypothesis after = apply_replace(state, rep.action.replace_tokens);
      record(iter, EditKind::Replace, state, std::move(rep.action), std::move(rep.log_prob), after);
      state = std::move(after);
    }
  }
  out.trace.final_hypothesis = state;
  return out;
}

Rollout rollout(const LevtModel& model, std::span<const TokenId> source, const RolloutOptions& options,
                Rng& rng) {
  return rollout(model, model.encode(source), options, rng);
}

std::vector<double> rescore_trace(const LevtModel& model, std::span<const TokenId> source, const EditTrace& trace,
                                  Real tau) {
  NoGradGuard no_grad;
  const Tensor memory = model.encode(source);
  std::vector<double> out;
  out.reserve(trace.steps.size());
  for (const auto& step : trace.steps) {
    Tensor logits;
    switch (step.kind) {
      case EditKind::Delete:
        logits = model.forward_delete(step.before, memory);
        break;
      case EditKind::Insert:
        logits = model.forward_insert(step.before, memory);
        break;
      case EditKind::Replace:
        logits = model.forward_replace(step.before, memory);
        break;
    }
    out.push_back(double(score_edit(logits, step.action, tau).item()));
  }
  return out;
}

nlohmann::json to_json(const EditAction& action) {
  nlohmann::json j;
  j["kind"] = to_string(action.kind);
  switch (action.kind) {
    case EditKind::Delete:
      j["delete_mask"] = action.delete_mask;
      break;
    case EditKind::Insert:
      j["insert_counts"] = action.insert_counts;
      break;
    case EditKind::Replace:
      j["replace_tokens"] = action.replace_tokens;
      break;
  }
  return j;
}

nlohmann::json to_json(const EditTrace& trace) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : trace.steps) {
    nlohmann::json j;
    j["iteration"] = s.iteration;
    j["before"] = s.before.tokens;
    j["action"] = to_json(s.action);
    j["log_prob"] = s.log_prob;
    j["after"] = s.after.tokens;
    if (s.bleu) j["bleu"] = *s.bleu;
    steps.push_back(std::move(j));
  }
  return {{"steps", std::move(steps)}, {"final", trace.final_hypothesis.tokens}, {"clamped", trace.clamped}};
}

LEVRL_NAMESPACE_END
