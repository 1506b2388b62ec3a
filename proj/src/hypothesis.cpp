#include "levrl/hypothesis.hpp"

#include <algorithm>
#include <string>

LEVRL_NAMESPACE_BEGIN

Hypothesis Hypothesis::null() { return Hypothesis{{vocab::kBos, vocab::kEos}}; }

Hypothesis Hypothesis::from_content(std::span<const TokenId> content) {
  Hypothesis h;
  h.tokens.reserve(content.size() + 2);
  h.tokens.push_back(vocab::kBos);
  h.tokens.insert(h.tokens.end(), content.begin(), content.end());
  h.tokens.push_back(vocab::kEos);
  return h;
}

TokenSeq Hypothesis::content() const {
  if (tokens.size() < 2) return {};
  return TokenSeq(tokens.begin() + 1, tokens.end() - 1);
}

std::size_t Hypothesis::placeholder_count() const {
  return static_cast<std::size_t>(std::count(tokens.begin(), tokens.end(), vocab::kPlh));
}

void validate_hypothesis(const Hypothesis& hyp, std::size_t max_len, std::size_t vocab_size) {
  const auto& t = hyp.tokens;
  if (t.size() < 2 || t.front() != vocab::kBos || t.back() != vocab::kEos) {
    throw StateError("hypothesis must start with BOS and end with EOS");
  }
  if (t.size() > max_len) {
    throw LengthError("hypothesis length " + std::to_string(t.size()) + " exceeds " + std::to_string(max_len));
  }
  for (std::size_t i = 1; i + 1 < t.size(); ++i) {
    if (t[i] < 0 || static_cast<std::size_t>(t[i]) >= vocab_size) {
      throw VocabularyError("token id " + std::to_string(t[i]) + " outside vocabulary of " +
                            std::to_string(vocab_size));
    }
    if (t[i] == vocab::kBos || t[i] == vocab::kEos || t[i] == vocab::kPad) {
      throw StateError("sentinel or padding id inside hypothesis at position " + std::to_string(i));
    }
  }
}

LEVRL_NAMESPACE_END
