// SPDX-License-Identifier: Apache-2.0
#include "mmtlab/synthetic.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include <fmt/format.h>

#include "mmtlab/error.hpp"
#include "mmtlab/rng.hpp"

namespace mmtlab {

void SyntheticCorpusSpec::validate() const {
  if (train_sizes.size() < 2) throw InvalidArgument("synthetic corpus: at least 2 languages are required");
  if (!mono_sizes.empty() && mono_sizes.size() != train_sizes.size()) {
    throw InvalidArgument("synthetic corpus: mono sizes do not match the language count");
  }
  if (!categories.empty() && categories.size() != train_sizes.size()) {
    throw InvalidArgument("synthetic corpus: categories do not match the language count");
  }
  for (auto s : train_sizes) {
    if (s == 0) throw InvalidArgument("synthetic corpus: empty parallel corpus");
  }
  if (latent_vocab < 2 || min_length == 0 || max_length < min_length) {
    throw InvalidArgument("synthetic corpus: bad vocabulary or length bounds");
  }
  if (!(token_noise >= 0.0 && token_noise < 1.0)) throw InvalidArgument("synthetic corpus: token_noise outside [0, 1)");
}

std::string size_category(std::size_t size, std::size_t largest) {
  const double r = static_cast<double>(size) / static_cast<double>(std::max<std::size_t>(largest, 1));
  if (r >= 0.5) return "high";
  if (r >= 0.05) return "low";
  return "very_low";
}

namespace {

constexpr std::string_view kConsonants = "bcdfghjklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

std::string make_word(RngStream& rng) {
  const std::size_t syllables = 2 + rng.uniform_index(2);
  std::string w;
  for (std::size_t s = 0; s < syllables; ++s) {
    w += kConsonants[rng.uniform_index(kConsonants.size())];
    w += kVowels[rng.uniform_index(kVowels.size())];
  }
  return w;
}

struct Lexicon {
  std::vector<std::string> words;  // latent id -> surface form
};

class LatentChain {
 public:
  LatentChain(std::size_t vocab, std::size_t successors, RngStream& rng) : vocab_(vocab) {
    successors = std::min(successors, vocab);
    next_.resize(vocab);
    weights_.resize(vocab);
    for (std::size_t a = 0; a < vocab; ++a) {
      std::vector<std::size_t> all(vocab);
      std::iota(all.begin(), all.end(), std::size_t{0});
      for (std::size_t i = 0; i < successors; ++i) std::swap(all[i], all[i + rng.uniform_index(vocab - i)]);
      next_[a].assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(successors));
      double z = 0;
      for (std::size_t i = 0; i < successors; ++i) {
        weights_[a].push_back(0.2 + rng.uniform());
        z += weights_[a].back();
      }
      for (auto& w : weights_[a]) w /= z;
    }
  }

  std::vector<std::size_t> sentence(std::size_t length, RngStream& rng) const {
    std::vector<std::size_t> out{rng.uniform_index(vocab_)};
    while (out.size() < length) {
      const auto& w = weights_[out.back()];
      double u = rng.uniform();
      std::size_t k = 0;
      while (k + 1 < w.size() && u >= w[k]) u -= w[k++];
      out.push_back(next_[out.back()][k]);
    }
    return out;
  }

 private:
  std::size_t vocab_;
  std::vector<std::vector<std::size_t>> next_;
  std::vector<std::vector<double>> weights_;
};

std::string render(const std::vector<std::size_t>& latent, const Lexicon& lex, double noise, bool reorder,
                   RngStream& rng) {
  std::vector<std::string> words;
  for (const auto t : latent) {
    if (noise > 0.0 && rng.uniform() < noise) {
      words.push_back(lex.words[rng.uniform_index(lex.words.size())]);
    } else {
      words.push_back(lex.words[t]);
    }
  }
  if (reorder) {
    for (std::size_t i = 0; i + 1 < words.size(); i += 2) std::swap(words[i], words[i + 1]);
  }
  std::string line;
  for (const auto& w : words) {
    if (!line.empty()) line += ' ';
    line += w;
  }
  return line;
}

}  // namespace

SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec) {
  spec.validate();
  const std::size_t n = spec.train_sizes.size();
  const std::size_t largest = *std::max_element(spec.train_sizes.begin(), spec.train_sizes.end());

  // Lexicons are disjoint across languages, pivot last.
  RngStream lex_rng(spec.seed, make_stream_id(StreamPurpose::corpus, 0));
  std::unordered_set<std::string> used;
  std::vector<Lexicon> lexicons(n + 1);
  for (auto& lex : lexicons) {
    while (lex.words.size() < spec.latent_vocab) {
      auto w = make_word(lex_rng);
      if (used.insert(w).second) lex.words.push_back(std::move(w));
    }
  }
  RngStream chain_rng(spec.seed, make_stream_id(StreamPurpose::corpus, 1));
  const LatentChain chain(spec.latent_vocab, spec.successors, chain_rng);

  SyntheticCorpus out;
  out.manifest.pivot = spec.pivot;
  out.text.resize(n);
  for (std::size_t l = 0; l < n; ++l) {
    const std::string code = fmt::format("x{:02d}", l);
    const bool reorder = spec.reorder_odd_languages && (l % 2 == 1);
    RngStream rng(spec.seed, make_stream_id(StreamPurpose::corpus, 2, l + 1));
    auto draw_length = [&] { return spec.min_length + rng.uniform_index(spec.max_length - spec.min_length + 1); };
    auto& txt = out.text[l];
    auto parallel = [&](std::size_t count, std::vector<std::string>& lang_side, std::vector<std::string>& pivot_side) {
      for (std::size_t i = 0; i < count; ++i) {
        const auto latent = chain.sentence(draw_length(), rng);
        lang_side.push_back(render(latent, lexicons[l], spec.token_noise, reorder, rng));
        pivot_side.push_back(render(latent, lexicons[n], 0.0, false, rng));
      }
    };
    parallel(spec.train_sizes[l], txt.train_lang, txt.train_pivot);
    parallel(spec.dev_size, txt.dev_lang, txt.dev_pivot);
    const std::size_t mono = spec.mono_sizes.empty() ? largest : spec.mono_sizes[l];
    for (std::size_t i = 0; i < mono; ++i) {
      txt.mono.push_back(render(chain.sentence(draw_length(), rng), lexicons[l], spec.token_noise, reorder, rng));
    }

    ManifestLanguage ml;
    ml.code = code;
    ml.category = spec.categories.empty() ? size_category(spec.train_sizes[l], largest) : spec.categories[l];
    ml.train_lang = fmt::format("train.{}-{}.{}", code, spec.pivot, code);
    ml.train_pivot = fmt::format("train.{}-{}.{}", code, spec.pivot, spec.pivot);
    ml.train_size = spec.train_sizes[l];
    if (mono > 0) {
      ml.mono = fmt::format("mono.{}", code);
      ml.mono_size = mono;
    }
    if (spec.dev_size > 0) {
      ml.dev_lang = fmt::format("dev.{}-{}.{}", code, spec.pivot, code);
      ml.dev_pivot = fmt::format("dev.{}-{}.{}", code, spec.pivot, spec.pivot);
      ml.dev_size = spec.dev_size;
    }
    out.manifest.languages.push_back(std::move(ml));
  }
  return out;
}

std::filesystem::path write_synthetic_corpus(const SyntheticCorpusSpec& spec, const std::filesystem::path& out_dir) {
  const auto corpus = generate_synthetic_corpus(spec);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  auto write = [&](const std::string& rel, const std::vector<std::string>& lines) {
    if (rel.empty()) return;
    std::ofstream os(out_dir / rel, std::ios::binary);
    if (!os) throw IoError("cannot write " + (out_dir / rel).string());
    for (const auto& line : lines) os << line << '\n';
    if (!os) throw IoError("write failed for " + (out_dir / rel).string());
  };
  for (std::size_t l = 0; l < corpus.text.size(); ++l) {
    const auto& ml = corpus.manifest.languages[l];
    const auto& txt = corpus.text[l];
    write(ml.train_lang, txt.train_lang);
    write(ml.train_pivot, txt.train_pivot);
    write(ml.mono, txt.mono);
    write(ml.dev_lang, txt.dev_lang);
    write(ml.dev_pivot, txt.dev_pivot);
  }
  const auto manifest_path = out_dir / "manifest.json";
  corpus.manifest.save(manifest_path);
  return manifest_path;
}

}  // namespace mmtlab
