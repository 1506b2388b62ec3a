#include "levrl/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>

LEVRL_NAMESPACE_BEGIN

namespace {

// n-grams of ids below 2^16 pack into one 64-bit key.
std::uint64_t ngram_key(std::span<const TokenId> seq, std::size_t start, std::size_t n) {
  std::uint64_t key = 0;
  for (std::size_t i = 0; i < n; ++i) {
    key = (key << 16) | (static_cast<std::uint64_t>(seq[start + i]) & 0xffffu);
  }
  return key;
}

std::unordered_map<std::uint64_t, long> count_ngrams(std::span<const TokenId> seq, std::size_t n) {
  std::unordered_map<std::uint64_t, long> counts;
  if (seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) ++counts[ngram_key(seq, i, n)];
  return counts;
}

}  // namespace

BleuStats& BleuStats::operator+=(const BleuStats& other) {
  for (int n = 0; n < kBleuOrder; ++n) {
    matches[n] += other.matches[n];
    totals[n] += other.totals[n];
  }
  hyp_length += other.hyp_length;
  ref_length += other.ref_length;
  return *this;
}

BleuStats operator+(BleuStats a, const BleuStats& b) { return a += b; }

BleuSmoothing parse_smoothing(std::string_view name) {
  if (name == "none") return BleuSmoothing::None;
  if (name == "addone") return BleuSmoothing::AddOne;
  throw InvalidArgument("unknown reward smoothing '" + std::string(name) + "' (expected none|addone)");
}

std::string_view to_string(BleuSmoothing smoothing) {
  return smoothing == BleuSmoothing::None ? "none" : "addone";
}

BleuStats bleu_stats(std::span<const TokenId> hyp, std::span<const TokenId> ref) {
  for (TokenId id : hyp) {
    if (id < 0 || id > 0xffff) throw InvalidArgument("bleu: token id out of range");
  }
  for (TokenId id : ref) {
    if (id < 0 || id > 0xffff) throw InvalidArgument("bleu: token id out of range");
  }
  BleuStats s;
  s.hyp_length = static_cast<long>(hyp.size());
  s.ref_length = static_cast<long>(ref.size());
  for (int n = 1; n <= kBleuOrder; ++n) {
    const auto hyp_counts = count_ngrams(hyp, std::size_t(n));
    const auto ref_counts = count_ngrams(ref, std::size_t(n));
    long matched = 0;
    for (const auto& [key, count] : hyp_counts) {
      auto it = ref_counts.find(key);
      if (it != ref_counts.end()) matched += std::min(count, it->second);
    }
    s.matches[n - 1] = matched;
    s.totals[n - 1] = hyp.size() >= std::size_t(n) ? static_cast<long>(hyp.size()) - n + 1 : 0;
  }
  return s;
}

double bleu_from_stats(const BleuStats& stats, BleuSmoothing smoothing) {
  if (stats.hyp_length == 0) return 0.0;
  double log_precision = 0;
  for (int n = 0; n < kBleuOrder; ++n) {
    double num = double(stats.matches[n]);
    double den = double(stats.totals[n]);
    if (smoothing == BleuSmoothing::AddOne && n > 0) {
      num += 1;
      den += 1;
    }
    if (num <= 0 || den <= 0) return 0.0;
    log_precision += std::log(num / den);
  }
  const double brevity = std::min(0.0, 1.0 - double(stats.ref_length) / double(stats.hyp_length));
  return std::exp(log_precision / kBleuOrder + brevity);
}

double sentence_bleu(std::span<const TokenId> hyp, std::span<const TokenId> ref, BleuSmoothing smoothing) {
  if (ref.empty()) throw InvalidArgument("sentence_bleu: empty reference");
  if (hyp.empty()) return 0.0;
  return bleu_from_stats(bleu_stats(hyp, ref), smoothing);
}

double corpus_bleu(std::span<const TokenPair> pairs) {
  if (pairs.empty()) throw InvalidArgument("corpus_bleu: empty corpus");
  BleuStats total;
  for (const auto& [hyp, ref] : pairs) total += bleu_stats(hyp, ref);
  return bleu_from_stats(total, BleuSmoothing::None);
}

LEVRL_NAMESPACE_END
