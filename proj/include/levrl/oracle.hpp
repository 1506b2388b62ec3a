#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "levrl/hypothesis.hpp"
#include "levrl/rng.hpp"

LEVRL_NAMESPACE_BEGIN

enum class AlignOp { Match, Substitute, Delete, Insert };

struct AlignedOp {
  AlignOp op;
  TokenId from;  // token of `current` (unused for Insert)
  TokenId to;    // token of `reference` (unused for Delete)
};

/// Minimum-cost unit edit script from `current` to `reference`.
struct Alignment {
  std::vector<AlignedOp> ops;
  std::size_t distance = 0;
};

std::size_t levenshtein_distance(std::span<const TokenId> a, std::span<const TokenId> b);

/// Optimal alignment; on cost ties the traceback prefers
/// match > substitute > delete > insert.
Alignment align(std::span<const TokenId> current, std::span<const TokenId> reference);

/// Applies the alignment's ops to `current`.
TokenSeq replay_alignment(std::span<const TokenId> current, const Alignment& alignment);

/// Supervision targets for one refinement iteration. Substitutions are
/// realized as a deletion followed by a placeholder fill.
struct ExpertActions {
  std::vector<std::uint8_t> delete_mask;  // per deletable position of `current`, 1 = delete
  std::vector<int> insert_counts;         // per gap of the post-deletion hypothesis
  TokenSeq fill_tokens;                   // reference tokens for the placeholders, in order
};

/// `reference` is content only (no sentinels). Throws StateError when
/// `current` holds placeholders and LengthError when the reference does not
/// fit in `max_seq_len` with its sentinels.
ExpertActions expert_actions(const Hypothesis& current, std::span<const TokenId> reference,
                             std::size_t max_seq_len);

/// Drops each reference token independently with probability `drop_rate`.
Hypothesis corrupt(std::span<const TokenId> reference, Rng& rng, double drop_rate);

LEVRL_NAMESPACE_END
