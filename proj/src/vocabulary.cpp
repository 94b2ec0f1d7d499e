// SPDX-License-Identifier: Apache-2.0
#include "mmtlab/vocabulary.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "mmtlab/error.hpp"

namespace mmtlab {

std::vector<std::string> split_words(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> languages, std::vector<std::string> words)
    : languages_(std::move(languages)) {
  std::set<std::string> seen_langs(languages_.begin(), languages_.end());
  if (seen_langs.size() != languages_.size()) throw InvalidArgument("Vocabulary: duplicate language code");
  tokens_ = {"<pad>", "<unk>", "<mask>", "</s>", "<pd>"};
  for (const auto& l : languages_) tokens_.push_back("<lang:" + l + ">");
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  for (auto& w : words) {
    words_.emplace(w, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(std::move(w));
  }
}

LanguageId Vocabulary::language_id(std::string_view code) const {
  for (std::size_t i = 0; i < languages_.size(); ++i) {
    if (languages_[i] == code) return i;
  }
  throw InvalidArgument(fmt::format("unknown language '{}'", code));
}

TokenId Vocabulary::language_tag(LanguageId lang) const {
  if (lang >= languages_.size()) throw InvalidArgument(fmt::format("language id {} out of range", lang));
  return static_cast<TokenId>(kFixedSpecials + lang);
}

TokenId Vocabulary::lookup(std::string_view word) const {
  auto it = words_.find(std::string(word));
  return it == words_.end() ? kUnk : it->second;
}

std::vector<TokenId> Vocabulary::encode(std::string_view line) const {
  std::vector<TokenId> out;
  for (const auto& w : split_words(line)) out.push_back(lookup(w));
  return out;
}

std::vector<std::string> Vocabulary::decode_words(std::span<const TokenId> ids) const {
  std::vector<std::string> out;
  for (const TokenId id : ids) {
    if (id == kUnk) {
      out.push_back(tokens_[kUnk]);
    } else if (!is_special(id)) {
      out.push_back(token(id));
    }
  }
  return out;
}

std::string Vocabulary::detokenize(std::span<const TokenId> ids) const {
  std::string out;
  for (const auto& w : decode_words(ids)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write vocabulary " + path.string());
  os << "#languages";
  for (const auto& l : languages_) os << ' ' << l;
  os << '\n';
  for (std::size_t i = first_word(); i < tokens_.size(); ++i) os << tokens_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read vocabulary " + path.string());
  std::string header;
  std::getline(is, header);
  auto fields = split_words(header);
  if (fields.empty() || fields.front() != "#languages") throw IoError(path.string() + ": missing #languages header");
  std::vector<std::string> langs(fields.begin() + 1, fields.end());
  std::vector<std::string> words;
  for (std::string line; std::getline(is, line);) {
    if (!line.empty()) words.push_back(line);
  }
  return Vocabulary(std::move(langs), std::move(words));
}

}  // namespace mmtlab
