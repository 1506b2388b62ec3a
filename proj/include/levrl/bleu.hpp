#pragma once

#include <array>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "levrl/common.hpp"

LEVRL_NAMESPACE_BEGIN

inline constexpr int kBleuOrder = 4;

/// Sufficient statistics for BLEU over token ids. Additive across sentences.
struct BleuStats {
  std::array<long, kBleuOrder> matches{};  // clipped n-gram matches, n = 1..4
  std::array<long, kBleuOrder> totals{};   // hypothesis n-gram counts
  long hyp_length = 0;
  long ref_length = 0;

  BleuStats& operator+=(const BleuStats& other);
  bool operator==(const BleuStats&) const = default;
};

BleuStats operator+(BleuStats a, const BleuStats& b);

enum class BleuSmoothing {
  None,
  /// Add one to numerator and denominator of the n >= 2 precisions.
  AddOne,
};

BleuSmoothing parse_smoothing(std::string_view name);
std::string_view to_string(BleuSmoothing smoothing);

BleuStats bleu_stats(std::span<const TokenId> hyp, std::span<const TokenId> ref);

/// BLEU in [0, 1] from accumulated statistics.
double bleu_from_stats(const BleuStats& stats, BleuSmoothing smoothing);

/// Smoothed sentence BLEU used as the RL reward. Empty hypothesis -> 0.
/// Throws InvalidArgument for an empty reference.
double sentence_bleu(std::span<const TokenId> hyp, std::span<const TokenId> ref,
                     BleuSmoothing smoothing = BleuSmoothing::AddOne);

using TokenPair = std::pair<std::vector<TokenId>, std::vector<TokenId>>;

/// Unsmoothed corpus BLEU over (hypothesis, reference) pairs.
double corpus_bleu(std::span<const TokenPair> pairs);

LEVRL_NAMESPACE_END
