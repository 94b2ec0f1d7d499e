// SPDX-License-Identifier: Apache-2.0
#include "mmtlab/corpus.hpp"

#include <algorithm>
#include <fstream>

#include <fmt/format.h>

#include "mmtlab/error.hpp"

namespace mmtlab {

std::string direction_name(Direction d) { return d == Direction::to_pivot ? "to_pivot" : "from_pivot"; }

Direction parse_direction(const std::string& s) {
  if (s == "to_pivot") return Direction::to_pivot;
  if (s == "from_pivot") return Direction::from_pivot;
  throw UsageError("unknown direction '" + s + "' (expected to_pivot | from_pivot)");
}

nlohmann::json Manifest::to_json() const {
  nlohmann::json langs = nlohmann::json::array();
  for (const auto& l : languages) {
    langs.push_back({{"code", l.code},
                     {"category", l.category},
                     {"train", {{"lang", l.train_lang}, {"pivot", l.train_pivot}, {"size", l.train_size}}},
                     {"mono", {{"path", l.mono}, {"size", l.mono_size}}},
                     {"dev", {{"lang", l.dev_lang}, {"pivot", l.dev_pivot}, {"size", l.dev_size}}}});
  }
  return {{"version", 1}, {"pivot", pivot}, {"languages", langs}};
}

Manifest Manifest::from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != 1) throw IoError("manifest: unsupported version");
    Manifest m;
    m.pivot = j.at("pivot").get<std::string>();
    for (const auto& l : j.at("languages")) {
      ManifestLanguage ml;
      ml.code = l.at("code").get<std::string>();
      ml.category = l.value("category", "high");
      ml.train_lang = l.at("train").at("lang").get<std::string>();
      ml.train_pivot = l.at("train").at("pivot").get<std::string>();
      ml.train_size = l.at("train").at("size").get<std::size_t>();
      if (l.contains("mono")) {
        ml.mono = l.at("mono").at("path").get<std::string>();
        ml.mono_size = l.at("mono").at("size").get<std::size_t>();
      }
      if (l.contains("dev")) {
        ml.dev_lang = l.at("dev").at("lang").get<std::string>();
        ml.dev_pivot = l.at("dev").at("pivot").get<std::string>();
        ml.dev_size = l.at("dev").at("size").get<std::size_t>();
      }
      m.languages.push_back(std::move(ml));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("manifest: ") + e.what());
  }
}

void Manifest::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << to_json().dump(2) << '\n';
}

Manifest Manifest::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read manifest " + path.string());
  try {
    return from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::vector<std::size_t> TrainingCorpus::parallel_sizes() const {
  std::vector<std::size_t> out;
  for (const auto& l : languages) out.push_back(l.train_source.size());
  return out;
}

std::vector<std::size_t> TrainingCorpus::denoise_sizes() const {
  std::vector<std::size_t> out;
  for (const auto& l : languages) out.push_back(l.denoise.size());
  return out;
}

std::size_t TrainingCorpus::max_sentence_length() const {
  std::size_t n = 0;
  for (const auto& l : languages) {
    for (const auto* set : {&l.train_source, &l.train_target, &l.denoise, &l.dev_source, &l.dev_target}) {
      for (const auto& s : *set) n = std::max(n, s.size());
    }
  }
  return n;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(is, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

namespace {

std::vector<std::string> read_expected(const std::filesystem::path& base, const std::string& rel,
                                       std::size_t expected) {
  auto lines = read_lines(base / rel);
  if (expected != 0 && lines.size() != expected) {
    throw IoError(fmt::format("{}: {} lines, manifest says {}", (base / rel).string(), lines.size(), expected));
  }
  return lines;
}

std::vector<Sentence> encode_all(const Vocabulary& vocab, const std::vector<std::string>& lines,
                                 const std::string& where) {
  std::vector<Sentence> out;
  out.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto s = vocab.encode(lines[i]);
    if (s.empty()) throw IoError(fmt::format("{}:{}: empty sentence", where, i + 1));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TrainingCorpus load_corpus(const Manifest& manifest, const std::filesystem::path& base_dir, Direction direction,
                           const Vocabulary* vocab) {
  if (manifest.languages.empty()) throw IoError("manifest lists no languages");
  struct Raw {
    std::vector<std::string> train_lang, train_pivot, mono, dev_lang, dev_pivot;
  };
  std::vector<Raw> raw(manifest.languages.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& ml = manifest.languages[i];
    raw[i].train_lang = read_expected(base_dir, ml.train_lang, ml.train_size);
    raw[i].train_pivot = read_expected(base_dir, ml.train_pivot, ml.train_size);
    if (raw[i].train_lang.size() != raw[i].train_pivot.size()) {
      throw IoError("unaligned parallel files for " + ml.code);
    }
    if (!ml.mono.empty()) raw[i].mono = read_expected(base_dir, ml.mono, ml.mono_size);
    if (!ml.dev_lang.empty()) {
      raw[i].dev_lang = read_expected(base_dir, ml.dev_lang, ml.dev_size);
      raw[i].dev_pivot = read_expected(base_dir, ml.dev_pivot, ml.dev_size);
    }
  }

  TrainingCorpus corpus;
  corpus.direction = direction;
  if (vocab) {
    corpus.vocab = *vocab;
  } else {
    std::vector<std::string> langs;
    for (const auto& ml : manifest.languages) langs.push_back(ml.code);
    langs.push_back(manifest.pivot);
    std::vector<std::string> words;
    for (const auto& r : raw) {
      for (const auto* set : {&r.train_lang, &r.train_pivot, &r.mono}) {
        for (const auto& line : *set) {
          for (auto& w : split_words(line)) words.push_back(std::move(w));
        }
      }
    }
    corpus.vocab = Vocabulary(std::move(langs), std::move(words));
  }
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& ml = manifest.languages[i];
    if (corpus.vocab.language_id(ml.code) != i) throw IoError("vocabulary language order does not match manifest");
    LanguageData d;
    d.code = ml.code;
    d.category = ml.category;
    auto lang = encode_all(corpus.vocab, raw[i].train_lang, ml.train_lang);
    auto pivot = encode_all(corpus.vocab, raw[i].train_pivot, ml.train_pivot);
    auto dev_lang = encode_all(corpus.vocab, raw[i].dev_lang, ml.dev_lang);
    auto dev_pivot = encode_all(corpus.vocab, raw[i].dev_pivot, ml.dev_pivot);
    d.denoise = encode_all(corpus.vocab, raw[i].mono, ml.mono);
    d.denoise.insert(d.denoise.end(), lang.begin(), lang.end());
    if (direction == Direction::to_pivot) {
      d.train_source = std::move(lang);
      d.train_target = std::move(pivot);
      d.dev_source = std::move(dev_lang);
      d.dev_target = std::move(dev_pivot);
    } else {
      d.train_source = std::move(pivot);
      d.train_target = std::move(lang);
      d.dev_source = std::move(dev_pivot);
      d.dev_target = std::move(dev_lang);
    }
    corpus.languages.push_back(std::move(d));
  }
  if (corpus.vocab.language_id(manifest.pivot) != corpus.pivot()) {
    throw IoError("vocabulary must list the pivot language last");
  }
  return corpus;
}

}  // namespace mmtlab
