// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mmtlab {

using TokenId = std::int32_t;
using LanguageId = std::size_t;

/// Word-level vocabulary. Ids are dense from 0: five fixed specials, then one
/// tag per language, then words in sorted order. Tags and specials are never
/// produced by encode(); raw text that spells them maps to <unk>.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kMask = 2;
  static constexpr TokenId kEos = 3;
  static constexpr TokenId kLossPad = 4;  // PD: target slot that is never scored
  static constexpr std::size_t kFixedSpecials = 5;

  Vocabulary() = default;
  Vocabulary(std::vector<std::string> languages, std::vector<std::string> words);

  std::size_t size() const { return tokens_.size(); }
  std::size_t language_count() const { return languages_.size(); }
  const std::vector<std::string>& languages() const { return languages_; }
  LanguageId language_id(std::string_view code) const;

  TokenId language_tag(LanguageId lang) const;
  TokenId first_word() const { return static_cast<TokenId>(kFixedSpecials + languages_.size()); }
  std::size_t word_count() const { return tokens_.size() - static_cast<std::size_t>(first_word()); }
  bool is_special(TokenId id) const { return id < first_word(); }
  bool is_language_tag(TokenId id) const {
    return id >= static_cast<TokenId>(kFixedSpecials) && id < first_word();
  }

  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  TokenId lookup(std::string_view word) const;

  std::vector<TokenId> encode(std::string_view line) const;
  /// Words of `ids` with every special removed.
  std::vector<std::string> decode_words(std::span<const TokenId> ids) const;
  std::string detokenize(std::span<const TokenId> ids) const;

  /// One token per line, id = line number; a header line lists languages.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> languages_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> words_;
};

std::vector<std::string> split_words(std::string_view line);

}  // namespace mmtlab
