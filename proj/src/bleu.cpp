// SPDX-License-Identifier: Apache-2.0
#include "mmtlab/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "mmtlab/error.hpp"
#include "mmtlab/vocabulary.hpp"

namespace mmtlab {

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> count_ngrams(const std::vector<std::string>& words, std::size_t n) {
  std::map<Ngram, std::size_t> out;
  for (std::size_t i = 0; i + n <= words.size(); ++i) ++out[Ngram(words.begin() + i, words.begin() + i + n)];
  return out;
}

}  // namespace

BleuResult corpus_bleu(const std::vector<std::vector<std::string>>& hypotheses,
                       const std::vector<std::vector<std::string>>& references, std::size_t max_order) {
  if (hypotheses.empty()) throw InvalidArgument("corpus_bleu: empty corpus");
  if (hypotheses.size() != references.size()) throw InvalidArgument("corpus_bleu: corpus sizes differ");
  if (max_order == 0) throw InvalidArgument("corpus_bleu: max_order must be positive");

  std::vector<std::size_t> matches(max_order, 0);
  std::vector<std::size_t> totals(max_order, 0);
  BleuResult r;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& hyp = hypotheses[s];
    const auto& ref = references[s];
    r.hypothesis_length += hyp.size();
    r.reference_length += ref.size();
    for (std::size_t n = 1; n <= max_order; ++n) {
      const auto h = count_ngrams(hyp, n);
      const auto g = count_ngrams(ref, n);
      for (const auto& [gram, c] : h) {
        const auto it = g.find(gram);
        if (it != g.end()) matches[n - 1] += std::min(c, it->second);
      }
      if (hyp.size() >= n) totals[n - 1] += hyp.size() - n + 1;
    }
  }

  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < max_order; ++n) {
    const double p = totals[n] == 0 ? 0.0 : static_cast<double>(matches[n]) / static_cast<double>(totals[n]);
    r.precisions.push_back(100.0 * p);
    if (p == 0.0) {
      zero = true;
    } else {
      log_sum += std::log(p);
    }
  }
  if (r.hypothesis_length == 0) {
    r.brevity_penalty = 0.0;
  } else if (r.hypothesis_length >= r.reference_length) {
    r.brevity_penalty = 1.0;
  } else {
    r.brevity_penalty =
        std::exp(1.0 - static_cast<double>(r.reference_length) / static_cast<double>(r.hypothesis_length));
  }
  r.score = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / static_cast<double>(max_order));
  return r;
}

BleuResult corpus_bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                       std::size_t max_order) {
  std::vector<std::vector<std::string>> h;
  std::vector<std::vector<std::string>> g;
  for (const auto& s : hypotheses) h.push_back(split_words(s));
  for (const auto& s : references) g.push_back(split_words(s));
  return corpus_bleu(h, g, max_order);
}

}  // namespace mmtlab
