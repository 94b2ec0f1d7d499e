// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmtlab/vocabulary.hpp"

namespace mmtlab {

enum class Direction { to_pivot, from_pivot };

std::string direction_name(Direction d);
Direction parse_direction(const std::string& s);

/// One non-pivot language of a corpus manifest. Paths are relative to the
/// manifest's directory.
struct ManifestLanguage {
  std::string code;
  std::string category;  // high | low | very_low
  std::string train_lang;
  std::string train_pivot;
  std::size_t train_size = 0;
  std::string mono;
  std::size_t mono_size = 0;
  std::string dev_lang;
  std::string dev_pivot;
  std::size_t dev_size = 0;
};

/// manifest.json: {"version":1,"pivot":"eng","languages":[{...}]}
struct Manifest {
  std::string pivot = "eng";
  std::vector<ManifestLanguage> languages;

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Manifest load(const std::filesystem::path& path);
};

using Sentence = std::vector<TokenId>;

struct LanguageData {
  std::string code;
  std::string category;
  // Oriented by the corpus direction: source is the encoder side.
  std::vector<Sentence> train_source;
  std::vector<Sentence> train_target;
  // Monolingual sentences plus the language's own side of the bitext.
  std::vector<Sentence> denoise;
  std::vector<Sentence> dev_source;
  std::vector<Sentence> dev_target;
};

/// Tokenized corpus. languages[i] is the language with vocabulary id i; the
/// pivot has the last vocabulary id and carries no LanguageData.
struct TrainingCorpus {
  Vocabulary vocab;
  Direction direction = Direction::to_pivot;
  std::vector<LanguageData> languages;

  LanguageId pivot() const { return languages.size(); }
  LanguageId source_language(LanguageId l) const { return direction == Direction::to_pivot ? l : pivot(); }
  LanguageId target_language(LanguageId l) const { return direction == Direction::to_pivot ? pivot() : l; }
  std::vector<std::size_t> parallel_sizes() const;
  std::vector<std::size_t> denoise_sizes() const;
  std::size_t max_sentence_length() const;
};

std::vector<std::string> read_lines(const std::filesystem::path& path);

/// Loads every file of a manifest. When `vocab` is empty a vocabulary is
/// built from the training and monolingual text.
TrainingCorpus load_corpus(const Manifest& manifest, const std::filesystem::path& base_dir, Direction direction,
                           const Vocabulary* vocab = nullptr);

}  // namespace mmtlab
