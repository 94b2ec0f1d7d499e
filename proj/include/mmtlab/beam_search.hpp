// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mmtlab/model.hpp"
#include "mmtlab/vocabulary.hpp"

namespace mmtlab {

struct BeamConfig {
  std::size_t beam = 5;
  double length_penalty = 1.0;
  std::size_t max_length = 64;  // generated tokens, EOS included
  TokenId eos = Vocabulary::kEos;
};

struct BeamResult {
  std::vector<TokenId> tokens;  // generated tokens without the prefix and EOS
  double log_prob = 0.0;
  double score = 0.0;           // log_prob / length^length_penalty
  bool complete = true;         // false when no hypothesis reached EOS
};

/// Log-probabilities of the next token for each prefix (all of equal length).
using NextTokenScorer =
    std::function<std::vector<std::vector<double>>(const std::vector<std::vector<TokenId>>& prefixes)>;

/// Beam search ranked by sum of log-probs / length^length_penalty, where the
/// length counts EOS. Each step keeps the 2*beam best extensions; an EOS
/// extension is finalized only when it ranks inside the first `beam`, which
/// makes beam=1 identical to greedy decoding. Search stops once `beam`
/// hypotheses are finalized or max_length is reached.
BeamResult beam_search(const NextTokenScorer& scorer, std::vector<TokenId> prefix, const BeamConfig& config);

/// Decodes one encoder input row (source words + language tag). Specials other
/// than EOS are never generated.
template <class T>
BeamResult translate(const Transformer<T>& model, const Vocabulary& vocab, std::span<const TokenId> encoder_input,
                     TokenId decoder_tag, std::size_t beam, double length_penalty);

}  // namespace mmtlab
