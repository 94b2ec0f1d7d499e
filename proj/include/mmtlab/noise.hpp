// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mmtlab/rng.hpp"
#include "mmtlab/vocabulary.hpp"

namespace mmtlab {

enum class SelectionRounding { round, floor, ceil };

/// Whole-word masking. A fraction `mask_ratio` of the words is selected;
/// each selected word is kept with `keep_prob`, replaced by a random word
/// with `random_prob`, and replaced by <mask> otherwise.
struct NoiseConfig {
  double mask_ratio = 0.30;
  double keep_prob = 0.10;
  double random_prob = 0.10;
  SelectionRounding rounding = SelectionRounding::round;

  void validate() const;
  /// Number of words selected in a sentence of n words (at least 1).
  std::size_t selected_count(std::size_t n) const;
};

enum class NoiseAction : std::uint8_t { none = 0, masked = 1, kept = 2, randomized = 3 };

struct NoisedExample {
  std::vector<TokenId> original;
  std::vector<TokenId> corrupted;
  // Set on every selected word, including kept ones.
  std::vector<std::uint8_t> masked_flags;
  std::vector<NoiseAction> actions;
  LanguageId language = 0;
};

NoisedExample noise_sentence(std::span<const TokenId> words, LanguageId language, const NoiseConfig& cfg,
                             const Vocabulary& vocab, RngStream& rng);

}  // namespace mmtlab
