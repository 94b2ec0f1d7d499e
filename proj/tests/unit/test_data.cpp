#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "mmtlab/batch.hpp"
#include "mmtlab/noise.hpp"
#include "mmtlab/sampling.hpp"
#include "mmtlab/synthetic.hpp"

using namespace mmtlab;

namespace {

Vocabulary toy_vocab() { return Vocabulary({"x00", "eng"}, {"a", "b", "c", "X1", "X2", "X3"}); }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("vocabulary ids and round trip") {
  const auto v = toy_vocab();
  CHECK(v.size() == Vocabulary::kFixedSpecials + 2 + 6);
  CHECK(v.language_tag(0) == 5);
  CHECK(v.language_tag(1) == 6);
  CHECK(v.first_word() == 7);
  CHECK(v.is_language_tag(6));
  CHECK_FALSE(v.is_language_tag(7));
  CHECK(v.lookup("zzz") == Vocabulary::kUnk);
  const auto ids = v.encode("a X2 c");
  CHECK(v.detokenize(ids) == "a X2 c");
  const auto dir = test::scratch("vocab");
  v.save(dir / "v.txt");
  CHECK(Vocabulary::load(dir / "v.txt") == v);
}

TEST_CASE("translation layout") {
  const auto v = toy_vocab();
  const auto a = v.lookup("a"), b = v.lookup("b"), c = v.lookup("c");
  const TokenId lg = v.language_tag(1);
  const auto row = layout_mmt(std::vector<TokenId>{a, b}, std::vector<TokenId>{c}, 0, 1, v, 16);
  CHECK(row.encoder_input == std::vector<TokenId>{a, b, lg});
  CHECK(row.decoder_input == std::vector<TokenId>{lg, c});
  CHECK(row.target == std::vector<TokenId>{c, Vocabulary::kEos});
  CHECK(row.score_mask == std::vector<std::uint8_t>{1, 1});
  CHECK_THROWS_AS(layout_mmt(std::vector<TokenId>{a}, std::vector<TokenId>{}, 0, 1, v, 16), InvalidArgument);
  const auto src_tag = layout_mmt(std::vector<TokenId>{a}, std::vector<TokenId>{c}, 0, 1, v, 16,
                                  TagPolicy::source_language);
  CHECK(src_tag.encoder_input.back() == v.language_tag(0));
}

TEST_CASE("concurrent denoising layout") {
  const auto v = toy_vocab();
  const auto x1 = v.lookup("X1"), x2 = v.lookup("X2"), x3 = v.lookup("X3");
  const TokenId lg = v.language_tag(0);
  NoisedExample ex;
  ex.original = {x1, x2, x3};
  ex.language = 0;
  SUBCASE("one masked word") {
    ex.corrupted = {x1, Vocabulary::kMask, x3};
    ex.masked_flags = {0, 1, 0};
    const auto row = layout_cd(ex, v, 16);
    CHECK(row.encoder_input == std::vector<TokenId>{x1, Vocabulary::kMask, x3, lg});
    CHECK(row.decoder_input == std::vector<TokenId>{lg, x1, Vocabulary::kMask, x3});
    CHECK(row.target == std::vector<TokenId>{x1, x2, x3, Vocabulary::kLossPad});
    CHECK(row.score_mask == std::vector<std::uint8_t>{0, 1, 0, 0});
  }
  SUBCASE("nothing masked") {
    ex.corrupted = ex.original;
    ex.masked_flags = {0, 0, 0};
    CHECK(layout_cd(ex, v, 16).score_mask == std::vector<std::uint8_t>{0, 0, 0, 0});
  }
  SUBCASE("everything masked") {
    ex.corrupted = {Vocabulary::kMask, Vocabulary::kMask, Vocabulary::kMask};
    ex.masked_flags = {1, 1, 1};
    CHECK(layout_cd(ex, v, 16).score_mask == std::vector<std::uint8_t>{1, 1, 1, 0});
  }
}

TEST_CASE("whole-word masking counts") {
  const auto v = toy_vocab();
  std::vector<TokenId> words(10, v.lookup("a"));
  NoiseConfig nc;
  RngStream rng(1, 1);
  for (int i = 0; i < 50; ++i) {
    const auto ex = noise_sentence(words, 0, nc, v, rng);
    std::size_t selected = 0;
    for (auto f : ex.masked_flags) selected += f;
    CHECK(selected == 3);
  }
  nc.mask_ratio = 0.0;
  const auto ex = noise_sentence(words, 0, nc, v, rng);
  std::size_t selected = 0;
  for (auto f : ex.masked_flags) selected += f;
  CHECK(selected == 1);

  NoiseConfig bad;
  bad.keep_prob = 0.6;
  bad.random_prob = 0.6;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("random replacement never returns the original word") {
  const auto v = toy_vocab();
  NoiseConfig nc;
  nc.mask_ratio = 1.0;
  nc.keep_prob = 0.0;
  nc.random_prob = 1.0;
  RngStream rng(2, 2);
  const std::vector<TokenId> words = {v.lookup("a"), v.lookup("b"), v.lookup("c")};
  for (int i = 0; i < 200; ++i) {
    const auto ex = noise_sentence(words, 0, nc, v, rng);
    for (std::size_t j = 0; j < words.size(); ++j) {
      CHECK(ex.corrupted[j] != words[j]);
      CHECK(ex.corrupted[j] >= v.first_word());
    }
  }
}

TEST_CASE("temperature probabilities") {
  const std::vector<std::size_t> sizes = {9, 1};
  const auto p1 = temperature_probabilities(sizes, 1.0);
  CHECK(p1[0] == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(p1[1] == doctest::Approx(0.1).epsilon(1e-12));
  const auto pt = temperature_probabilities(sizes, 10.0 / 7.0);
  const double a = std::pow(9.0, 0.7);
  CHECK(pt[0] == doctest::Approx(a / (a + 1.0)).epsilon(1e-12));
  CHECK(pt[0] == doctest::Approx(0.823).epsilon(1e-3));
  const std::vector<std::size_t> even = {5, 5, 5};
  for (const double t : {1.0, 10.0 / 7.0, 5.0}) {
    for (const double p : temperature_probabilities(even, t)) CHECK(p == doctest::Approx(1.0 / 3.0));
  }
  CHECK_THROWS_AS(temperature_probabilities(sizes, 0.0), InvalidArgument);
}

TEST_CASE("synthetic corpus generator") {
  const auto d1 = test::scratch("gen1");
  const auto d2 = test::scratch("gen2");
  SyntheticCorpusSpec spec;
  spec.train_sizes = {50, 20, 5, 1};
  spec.dev_size = 7;
  const auto m1 = write_synthetic_corpus(spec, d1);
  write_synthetic_corpus(spec, d2);
  const auto manifest = Manifest::load(m1);
  REQUIRE(manifest.languages.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& l = manifest.languages[i];
    CHECK(read_lines(d1 / l.train_lang).size() == spec.train_sizes[i]);
    CHECK(read_lines(d1 / l.train_pivot).size() == spec.train_sizes[i]);
    CHECK(read_lines(d1 / l.mono).size() == l.mono_size);
    CHECK(read_lines(d1 / l.dev_lang).size() == 7);
    CHECK(slurp(d1 / l.train_lang) == slurp(d2 / l.train_lang));
    CHECK(slurp(d1 / l.mono) == slurp(d2 / l.mono));
  }
  CHECK(manifest.languages[0].category == "high");
  CHECK(manifest.languages[3].category == "very_low");

  spec.train_sizes = {10};
  CHECK_THROWS_AS(write_synthetic_corpus(spec, test::scratch("gen3")), InvalidArgument);
}

TEST_CASE("corpus loading and batch sampling") {
  const auto corpus = test::small_corpus("load");
  CHECK(corpus.languages.size() == 4);
  CHECK(corpus.pivot() == 4);
  CHECK(corpus.vocab.language_count() == 5);
  CHECK(corpus.parallel_sizes() == std::vector<std::size_t>{200, 80, 20, 8});

  StreamOptions so;
  so.batch_tokens = 256;
  SamplingConfig sc;
  SUBCASE("mix ratio extremes") {
    for (const double mix : {0.0, 1.0}) {
      sc.mix_ratio = mix;
      MixedStream s(corpus, sc, so);
      for (std::uint64_t i = 0; i < 40; ++i) {
        CHECK(s.batch_at(i).task == (mix == 0.0 ? Task::translation : Task::denoising));
      }
    }
  }
  SUBCASE("batches are seekable and respect the token budget") {
    MixedStream s(corpus, sc, so);
    const auto a = s.next();
    const auto b = s.next();
    CHECK(a.encoder_tokens == s.batch_at(0).encoder_tokens);
    CHECK(b.target == s.batch_at(1).target);
    for (std::uint64_t i = 0; i < 30; ++i) {
      const auto batch = s.batch_at(i);
      CHECK(batch.token_count() <= so.batch_tokens);
      CHECK(batch.rows >= 1);
      if (batch.task == Task::denoising) CHECK(batch.src_len == batch.tgt_len);
    }
  }
  SUBCASE("dev batches keep corpus order") {
    const auto dev = dev_batches(corpus, 2, so);
    std::size_t rows = 0;
    for (const auto& b : dev) rows += b.rows;
    CHECK(rows == corpus.languages[2].dev_source.size());
  }
}
