// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmtlab/corpus.hpp"

namespace mmtlab {

/// Cipher-task corpora. Latent sentences come from a sparse bigram chain;
/// each language renders a latent token through its own bijective lexicon,
/// substitutes a random word of its lexicon with probability `token_noise`,
/// and odd-numbered languages swap adjacent word pairs. The pivot language
/// is a clean rendering of the same latent sentence.
struct SyntheticCorpusSpec {
  std::vector<std::size_t> train_sizes = {5000, 2000, 500, 100};
  // Empty means every language gets max(train_sizes) monolingual lines.
  std::vector<std::size_t> mono_sizes;
  std::size_t dev_size = 100;
  std::size_t latent_vocab = 40;
  std::size_t min_length = 4;
  std::size_t max_length = 12;
  std::size_t successors = 5;
  double token_noise = 0.02;
  bool reorder_odd_languages = true;
  std::uint64_t seed = 1;
  std::string pivot = "eng";
  // Empty means categories are derived from relative size.
  std::vector<std::string> categories;

  void validate() const;
};

struct SyntheticLanguageText {
  std::vector<std::string> train_lang, train_pivot, mono, dev_lang, dev_pivot;
};

struct SyntheticCorpus {
  Manifest manifest;
  std::vector<SyntheticLanguageText> text;
};

/// high if size >= 50% of the largest, low if >= 5%, very_low otherwise.
std::string size_category(std::size_t size, std::size_t largest);

SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec);

/// Writes the corpus files and manifest.json into `out_dir`; returns the manifest path.
std::filesystem::path write_synthetic_corpus(const SyntheticCorpusSpec& spec, const std::filesystem::path& out_dir);

}  // namespace mmtlab
