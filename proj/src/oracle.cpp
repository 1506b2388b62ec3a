#include "levrl/oracle.hpp"

#include <algorithm>
#include <string>

LEVRL_NAMESPACE_BEGIN

namespace {

std::vector<std::size_t> distance_table(std::span<const TokenId> a, std::span<const TokenId> b) {
  const std::size_t n = a.size(), m = b.size(), w = m + 1;
  std::vector<std::size_t> d((n + 1) * w);
  for (std::size_t i = 0; i <= n; ++i) d[i * w] = i;
  for (std::size_t j = 0; j <= m; ++j) d[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = d[(i - 1) * w + j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      d[i * w + j] = std::min({diag, d[(i - 1) * w + j] + 1, d[i * w + j - 1] + 1});
    }
  }
  return d;
}

}  // namespace

std::size_t levenshtein_distance(std::span<const TokenId> a, std::span<const TokenId> b) {
  return distance_table(a, b).back();
}

Alignment align(std::span<const TokenId> current, std::span<const TokenId> reference) {
  const auto d = distance_table(current, reference);
  const std::size_t w = reference.size() + 1;
  Alignment out;
  out.distance = d.back();
  std::size_t i = current.size(), j = reference.size();
  while (i > 0 || j > 0) {
    const std::size_t here = d[i * w + j];
    if (i > 0 && j > 0 && current[i - 1] == reference[j - 1] && here == d[(i - 1) * w + j - 1]) {
      out.ops.push_back({AlignOp::Match, current[i - 1], reference[j - 1]});
      --i, --j;
    } else if (i > 0 && j > 0 && current[i - 1] != reference[j - 1] && here == d[(i - 1) * w + j - 1] + 1) {
      out.ops.push_back({AlignOp::Substitute, current[i - 1], reference[j - 1]});
      --i, --j;
    } else if (i > 0 && here == d[(i - 1) * w + j] + 1) {
      out.ops.push_back({AlignOp::Delete, current[i - 1], vocab::kPad});
      --i;
    } else {
      out.ops.push_back({AlignOp::Insert, vocab::kPad, reference[j - 1]});
      --j;
    }
  }
  std::reverse(out.ops.begin(), out.ops.end());
  return out;
}

TokenSeq replay_alignment(std::span<const TokenId> current, const Alignment& alignment) {
  TokenSeq out;
  std::size_t i = 0;
  for (const auto& step : alignment.ops) {
    switch (step.op) {
      case AlignOp::Match:
      case AlignOp::Substitute:
        if (i >= current.size()) throw ShapeError("replay_alignment: alignment overruns input");
        out.push_back(step.to);
        ++i;
        break;
      case AlignOp::Delete:
        if (i >= current.size()) throw ShapeError("replay_alignment: alignment overruns input");
        ++i;
        break;
      case AlignOp::Insert:
        out.push_back(step.to);
        break;
    }
  }
  if (i != current.size()) throw ShapeError("replay_alignment: alignment leaves input unconsumed");
  return out;
}

ExpertActions expert_actions(const Hypothesis& current, std::span<const TokenId> reference,
                             std::size_t max_seq_len) {
  if (current.has_placeholders()) throw StateError("expert_actions: current hypothesis holds placeholders");
  if (reference.size() + 2 > max_seq_len) {
    throw LengthError("expert_actions: reference of length " + std::to_string(reference.size()) +
                      " does not fit max_seq_len " + std::to_string(max_seq_len));
  }
  const TokenSeq content = current.content();
  const Alignment alignment = align(content, reference);

  ExpertActions out;
  out.delete_mask.reserve(content.size());
  out.insert_counts.push_back(0);
  for (const auto& step : alignment.ops) {
    switch (step.op) {
      case AlignOp::Match:
        out.delete_mask.push_back(0);
        out.insert_counts.push_back(0);
        break;
      case AlignOp::Substitute:
        out.delete_mask.push_back(1);
        ++out.insert_counts.back();
        out.fill_tokens.push_back(step.to);
        break;
      case AlignOp::Delete:
        out.delete_mask.push_back(1);
        break;
      case AlignOp::Insert:
        ++out.insert_counts.back();
        out.fill_tokens.push_back(step.to);
        break;
    }
  }
  return out;
}

Hypothesis corrupt(std::span<const TokenId> reference, Rng& rng, double drop_rate) {
  if (!(drop_rate >= 0.0 && drop_rate <= 1.0)) throw InvalidArgument("corrupt: drop_rate must lie in [0, 1]");
  TokenSeq kept;
  for (TokenId t : reference) {
    if (!rng.bernoulli(drop_rate)) kept.push_back(t);
  }
  return Hypothesis::from_content(kept);
}

LEVRL_NAMESPACE_END
