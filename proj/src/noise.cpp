// SPDX-License-Identifier: Apache-2.0
#include "mmtlab/noise.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "mmtlab/error.hpp"

namespace mmtlab {

void NoiseConfig::validate() const {
  auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!in_unit(mask_ratio) || !in_unit(keep_prob) || !in_unit(random_prob)) {
    throw InvalidArgument("NoiseConfig: probabilities must lie in [0, 1]");
  }
  if (keep_prob + random_prob > 1.0) throw InvalidArgument("NoiseConfig: keep_prob + random_prob exceeds 1");
}

std::size_t NoiseConfig::selected_count(std::size_t n) const {
  const double raw = mask_ratio * static_cast<double>(n);
  double k = 0;
  switch (rounding) {
    case SelectionRounding::round: k = std::round(raw); break;
    case SelectionRounding::floor: k = std::floor(raw + 1e-9); break;
    case SelectionRounding::ceil: k = std::ceil(raw - 1e-9); break;
  }
  return std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, n);
}

NoisedExample noise_sentence(std::span<const TokenId> words, LanguageId language, const NoiseConfig& cfg,
                             const Vocabulary& vocab, RngStream& rng) {
  if (words.empty()) throw InvalidArgument("noise_sentence: empty sentence");
  cfg.validate();
  const std::size_t n = words.size();
  NoisedExample ex;
  ex.language = language;
  ex.original.assign(words.begin(), words.end());
  ex.corrupted = ex.original;
  ex.masked_flags.assign(n, 0);
  ex.actions.assign(n, NoiseAction::none);

  // Partial Fisher-Yates: the first k slots of `order` are a uniform k-subset.
  const std::size_t k = cfg.selected_count(n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) std::swap(order[i], order[i + rng.uniform_index(n - i)]);

  const std::size_t words_in_vocab = vocab.word_count();
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t pos = order[i];
    ex.masked_flags[pos] = 1;
    const double u = rng.uniform();
    if (u < cfg.keep_prob) {
      ex.actions[pos] = NoiseAction::kept;
    } else if (u < cfg.keep_prob + cfg.random_prob) {
      ex.actions[pos] = NoiseAction::randomized;
      const TokenId orig = ex.original[pos];
      if (vocab.is_special(orig) && words_in_vocab > 0) {
        ex.corrupted[pos] = vocab.first_word() + static_cast<TokenId>(rng.uniform_index(words_in_vocab));
      } else if (words_in_vocab > 1) {
        // A different word, uniform over the rest of the word range.
        TokenId pick = vocab.first_word() + static_cast<TokenId>(rng.uniform_index(words_in_vocab - 1));
        if (pick >= orig) ++pick;
        ex.corrupted[pos] = pick;
      }
    } else {
      ex.actions[pos] = NoiseAction::masked;
      ex.corrupted[pos] = Vocabulary::kMask;
    }
  }
  return ex;
}

}  // namespace mmtlab
