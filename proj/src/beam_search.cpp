// SPDX-License-Identifier: Apache-2.0
#include "mmtlab/beam_search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mmtlab/error.hpp"

namespace mmtlab {

namespace {

struct Hypothesis {
  std::vector<TokenId> tokens;  // full prefix
  double log_prob = 0.0;
};

struct Candidate {
  double log_prob;
  std::size_t hyp;
  TokenId token;
};

double normalized(double log_prob, std::size_t length, double penalty) {
  return log_prob / std::pow(static_cast<double>(length), penalty);
}

}  // namespace

BeamResult beam_search(const NextTokenScorer& scorer, std::vector<TokenId> prefix, const BeamConfig& config) {
  if (config.beam == 0) throw InvalidArgument("beam_search: beam must be at least 1");
  if (prefix.empty()) throw InvalidArgument("beam_search: empty prefix");
  const std::size_t start = prefix.size();
  std::vector<Hypothesis> live{{std::move(prefix), 0.0}};
  std::vector<BeamResult> finished;

  for (std::size_t step = 1; step <= config.max_length && !live.empty(); ++step) {
    std::vector<std::vector<TokenId>> prefixes;
    for (const auto& h : live) prefixes.push_back(h.tokens);
    const auto scores = scorer(prefixes);
    if (scores.size() != live.size()) throw ShapeError("beam_search: scorer returned the wrong row count");

    std::vector<Candidate> cands;
    for (std::size_t h = 0; h < live.size(); ++h) {
      for (std::size_t v = 0; v < scores[h].size(); ++v) {
        cands.push_back({live[h].log_prob + scores[h][v], h, static_cast<TokenId>(v)});
      }
    }
    const std::size_t keep = std::min(cands.size(), 2 * config.beam);
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        if (a.hyp != b.hyp) return a.hyp < b.hyp;
                        return a.token < b.token;
                      });

    std::vector<Hypothesis> next;
    for (std::size_t rank = 0; rank < keep && next.size() < config.beam; ++rank) {
      const auto& c = cands[rank];
      if (c.token == config.eos) {
        if (rank < config.beam && finished.size() < config.beam) {
          BeamResult r;
          r.tokens.assign(live[c.hyp].tokens.begin() + static_cast<std::ptrdiff_t>(start), live[c.hyp].tokens.end());
          r.log_prob = c.log_prob;
          r.score = normalized(c.log_prob, step, config.length_penalty);
          finished.push_back(std::move(r));
        }
        continue;
      }
      Hypothesis h{live[c.hyp].tokens, c.log_prob};
      h.tokens.push_back(c.token);
      next.push_back(std::move(h));
    }
    if (finished.size() >= config.beam) break;
    live = std::move(next);
  }

  if (!finished.empty()) {
    return *std::max_element(finished.begin(), finished.end(),
                             [](const BeamResult& a, const BeamResult& b) { return a.score < b.score; });
  }
  BeamResult best;
  best.complete = false;
  best.score = -std::numeric_limits<double>::infinity();
  for (const auto& h : live) {
    const std::size_t len = h.tokens.size() - start;
    const double s = normalized(h.log_prob, std::max<std::size_t>(len, 1), config.length_penalty);
    if (s > best.score) {
      best.tokens.assign(h.tokens.begin() + static_cast<std::ptrdiff_t>(start), h.tokens.end());
      best.log_prob = h.log_prob;
      best.score = s;
    }
  }
  return best;
}

template <class T>
BeamResult translate(const Transformer<T>& model, const Vocabulary& vocab, std::span<const TokenId> encoder_input,
                     TokenId decoder_tag, std::size_t beam, double length_penalty) {
  DecodeSession<T> session(model, encoder_input);
  const TokenId first_word = vocab.first_word();
  NextTokenScorer scorer = [&](const std::vector<std::vector<TokenId>>& prefixes) {
    auto lp = session.next_log_probs(prefixes);
    for (auto& row : lp) {
      for (TokenId t = 0; t < first_word; ++t) {
        if (t != Vocabulary::kEos) row[static_cast<std::size_t>(t)] = -1e30;
      }
    }
    return lp;
  };
  BeamConfig cfg;
  cfg.beam = beam;
  cfg.length_penalty = length_penalty;
  const std::size_t limit = model.config().max_positions - 1;
  cfg.max_length = std::min(limit, 2 * encoder_input.size() + 10);
  return beam_search(scorer, {decoder_tag}, cfg);
}

template BeamResult translate(const Transformer<float>&, const Vocabulary&, std::span<const TokenId>, TokenId,
                              std::size_t, double);
template BeamResult translate(const Transformer<double>&, const Vocabulary&, std::span<const TokenId>, TokenId,
                              std::size_t, double);

}  // namespace mmtlab
