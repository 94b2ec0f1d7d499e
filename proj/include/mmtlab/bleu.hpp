// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace mmtlab {

struct BleuResult {
  double score = 0.0;  // 0..100
  std::vector<double> precisions;
  double brevity_penalty = 0.0;
  std::size_t hypothesis_length = 0;
  std::size_t reference_length = 0;
};

/// Corpus BLEU over pre-tokenized sentences: geometric mean of clipped
/// 1..max_order-gram precisions times the brevity penalty, no smoothing.
BleuResult corpus_bleu(const std::vector<std::vector<std::string>>& hypotheses,
                       const std::vector<std::vector<std::string>>& references, std::size_t max_order = 4);

/// Whitespace-tokenizing overload.
BleuResult corpus_bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                       std::size_t max_order = 4);

}  // namespace mmtlab
