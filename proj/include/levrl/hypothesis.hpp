#pragma once

#include <span>
#include <vector>

#include "levrl/common.hpp"

LEVRL_NAMESPACE_BEGIN

/// Ids reserved in every vocabulary; content tokens start at kFirstContent.
namespace vocab {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kPlh = 3;
inline constexpr TokenId kUnk = 4;
inline constexpr TokenId kFirstContent = 5;

constexpr bool is_reserved(TokenId id) { return id >= 0 && id < kFirstContent; }
}  // namespace vocab

using TokenSeq = std::vector<TokenId>;

/// Decoder state: BOS ... EOS, possibly with placeholders in between.
struct Hypothesis {
  TokenSeq tokens;

  /// [BOS, EOS]
  static Hypothesis null();
  static Hypothesis from_content(std::span<const TokenId> content);

  std::size_t size() const { return tokens.size(); }
  /// Tokens strictly between the sentinels.
  TokenSeq content() const;
  std::size_t placeholder_count() const;
  bool has_placeholders() const { return placeholder_count() > 0; }

  bool operator==(const Hypothesis&) const = default;
};

/// Throws StateError for missing/misplaced sentinels, LengthError when longer
/// than `max_len`, VocabularyError for ids outside [0, vocab_size).
void validate_hypothesis(const Hypothesis& hyp, std::size_t max_len, std::size_t vocab_size);

LEVRL_NAMESPACE_END
