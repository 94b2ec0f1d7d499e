#include <doctest.h>

#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "mmtlab/autodiff.hpp"
#include "mmtlab/gradcheck.hpp"
#include "mmtlab/losses.hpp"
#include "mmtlab/model.hpp"
#include "mmtlab/noise.hpp"

using namespace mmtlab;

namespace {

Vocabulary toy_vocab() { return Vocabulary({"x00", "eng"}, {"a", "b", "c", "d", "e"}); }

Batch mmt_batch(const Vocabulary& v) {
  std::vector<BatchRow> rows;
  rows.push_back(layout_mmt(v.encode("a b c"), v.encode("d e"), 0, 1, v, 24));
  rows.push_back(layout_mmt(v.encode("e"), v.encode("a b c d"), 0, 1, v, 24));
  return collate(Task::translation, rows);
}

Batch cd_batch(const Vocabulary& v) {
  NoiseConfig nc;
  RngStream rng(3, 3);
  std::vector<BatchRow> rows;
  for (const char* s : {"a b c d", "e d"}) {
    const auto words = v.encode(s);
    rows.push_back(layout_cd(noise_sentence(words, 0, nc, v, rng), v, 24));
  }
  return collate(Task::denoising, rows);
}

}  // namespace

TEST_CASE("single-token translation row gives two logit rows") {
  const auto v = toy_vocab();
  Transformer<double> model(test::tiny_model(v.size()), 1);
  std::vector<BatchRow> rows = {layout_mmt(v.encode("a"), v.encode("c"), 0, 1, v, 24)};
  const auto batch = collate(Task::translation, rows);
  ad::Tape<double> tape(false);
  const auto p = tape.bind(model.parameters());
  const auto out = model.forward_mmt(tape, p, batch, nullptr);
  CHECK(out.decoder_logits.rows() == 2);
  CHECK(out.decoder_logits.cols() == v.size());
  CHECK_FALSE(out.encoder_logits.has_value());
}

TEST_CASE("dropout determinism") {
  const auto v = toy_vocab();
  const auto batch = mmt_batch(v);
  auto cfg = test::tiny_model(v.size());
  auto run = [&](Transformer<double>& m, RngStream* rng) {
    ad::Tape<double> tape(false);
    const auto p = tape.bind(m.parameters());
    return m.forward_mmt(tape, p, batch, rng).decoder_logits.value();
  };
  SUBCASE("rate 0 gives identical logits") {
    cfg.dropout_rate = 0.0;
    Transformer<double> m(cfg, 4);
    RngStream r1(1, 1), r2(1, 2);
    CHECK(run(m, &r1) == run(m, &r2));
  }
  SUBCASE("distinct streams give different logits") {
    Transformer<double> m(cfg, 4);
    RngStream r1(1, 1), r2(1, 2), r3(1, 1);
    const auto a = run(m, &r1);
    CHECK_FALSE(a == run(m, &r2));
    CHECK(a == run(m, &r3));
  }
}

TEST_CASE("same seed builds the same model") {
  const auto cfg = test::tiny_model(12);
  Transformer<double> a(cfg, 9), b(cfg, 9), c(cfg, 10);
  CHECK(a.parameters() == b.parameters());
  CHECK_FALSE(a.parameters() == c.parameters());
  const auto& tokens = a.parameters().entry(a.parameters().index_of("embed.tokens"));
  for (std::size_t j = 0; j < cfg.model_dim; ++j) CHECK(tokens.value.at(Vocabulary::kPad, j) == 0.0);
}

TEST_CASE("unshared projection adds exactly one vocab x d tensor") {
  auto cfg = test::tiny_model(20, 16, 2);
  cfg.share_projection = true;
  Transformer<float> shared(cfg, 1);
  cfg.share_projection = false;
  Transformer<float> split(cfg, 1);
  CHECK(split.parameter_count() - shared.parameter_count() == 20 * 16);
  CHECK(split.parameters().entry_count() == shared.parameters().entry_count() + 1);
  CHECK(split.encoder_projection_entry().has_value());
  CHECK_FALSE(shared.encoder_projection_entry().has_value());
  CHECK(split.parameters().find("proj.encoder.weight").has_value());
}

TEST_CASE("shared projection receives encoder-head gradients") {
  const auto v = toy_vocab();
  auto cfg = test::tiny_model(v.size());
  cfg.dropout_rate = 0.0;
  const auto batch = cd_batch(v);
  for (const bool share : {true, false}) {
    cfg.share_projection = share;
    Transformer<double> m(cfg, 2);
    m.parameters().zero_grad();
    ad::Tape<double> tape;
    const auto p = tape.bind(m.parameters());
    const auto out = m.forward_cd(tape, p, batch, nullptr);
    REQUIRE(out.encoder_logits.has_value());
    CHECK(out.encoder_logits->rows() == out.decoder_logits.rows());
    tape.backward(ad::masked_cross_entropy(*out.encoder_logits, std::span<const std::int32_t>(batch.target),
                                           std::span<const std::uint8_t>(batch.score_mask)));
    double dec_norm = 0.0;
    for (const double g : m.parameters().entry(m.projection_entry()).grad) dec_norm += std::abs(g);
    if (share) {
      CHECK(dec_norm > 0.0);
    } else {
      CHECK(dec_norm == 0.0);
      double enc_norm = 0.0;
      for (const double g : m.parameters().entry(*m.encoder_projection_entry()).grad) enc_norm += std::abs(g);
      CHECK(enc_norm > 0.0);
    }
  }
}

TEST_CASE("prune masks on the model") {
  const auto v = toy_vocab();
  const auto batch = mmt_batch(v);
  auto cfg = test::tiny_model(v.size());
  Transformer<double> m(cfg, 5);
  auto logits = [&] {
    ad::Tape<double> tape(false);
    const auto p = tape.bind(m.parameters());
    return m.forward_mmt(tape, p, batch, nullptr).decoder_logits.value();
  };
  const auto before = logits();
  const std::size_t n = m.parameter_count();
  SUBCASE("all-ones mask changes nothing") {
    apply_prune_mask(m.parameters(), std::vector<std::uint8_t>(n, 1));
    CHECK(logits() == before);
  }
  SUBCASE("zeroed projection gives uniform logits") {
    std::vector<std::uint8_t> keep(n, 1);
    const auto& proj = m.parameters().entry(m.projection_entry());
    for (std::size_t i = 0; i < proj.value.size(); ++i) keep[proj.flat_offset + i] = 0;
    apply_prune_mask(m.parameters(), keep);
    const auto after = logits();
    for (const double x : after.values()) CHECK(x == 0.0);
  }
}

TEST_CASE("full training objective passes the gradient check (2 layers, d=8)") {
  const auto v = toy_vocab();
  auto cfg = test::tiny_model(v.size(), 8, 2);
  cfg.share_projection = true;
  Transformer<double> m(cfg, 6);
  const auto mmt = mmt_batch(v);
  const auto cd = cd_batch(v);
  const TapeObjective<double> f = [&](ad::Tape<double>& tape, std::span<const ad::Var<double>> p) {
    std::vector<ad::Var<double>> mmt_logits, enc, dec;
    ad::Var<double> total;
    bool first = true;
    auto add = [&](ad::Var<double> x) {
      total = first ? x : total + x;
      first = false;
    };
    for (std::uint64_t k = 0; k < 2; ++k) {
      RngStream r1(11, make_stream_id(StreamPurpose::dropout, 1, k));
      mmt_logits.push_back(m.forward_mmt(tape, p, mmt, &r1).decoder_logits);
      add(ad::scale(ad::masked_cross_entropy(mmt_logits.back(), std::span<const std::int32_t>(mmt.target),
                                             std::span<const std::uint8_t>(mmt.score_mask)),
                    0.5));
      RngStream r2(11, make_stream_id(StreamPurpose::dropout, 2, k));
      auto out = m.forward_cd(tape, p, cd, &r2);
      enc.push_back(*out.encoder_logits);
      dec.push_back(out.decoder_logits);
      add(ad::scale(ad::masked_cross_entropy(enc.back(), std::span<const std::int32_t>(cd.target),
                                             std::span<const std::uint8_t>(cd.score_mask)),
                    0.5));
      add(ad::scale(ad::masked_cross_entropy(dec.back(), std::span<const std::int32_t>(cd.target),
                                             std::span<const std::uint8_t>(cd.score_mask)),
                    0.5));
    }
    add(ad::scale(ad::x_divergence(std::span<const ad::Var<double>>(mmt_logits),
                                   std::span<const std::uint8_t>(mmt.score_mask)),
                  5.0));
    add(ad::scale(ad::x_divergence(std::span<const ad::Var<double>>(enc), std::span<const std::uint8_t>(cd.score_mask)),
                  5.0));
    add(ad::scale(ad::x_divergence(std::span<const ad::Var<double>>(dec), std::span<const std::uint8_t>(cd.score_mask)),
                  5.0));
    return total;
  };
  const auto r = finite_difference_check(f, m.parameters(), {1e-5, 0, 0});
  CHECK(r.checked == m.parameter_count());
  INFO("worst ", r.worst_flat_index, " analytic ", r.worst_analytic, " numeric ", r.worst_numeric);
  CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("decode session matches the full forward") {
  const auto v = toy_vocab();
  auto cfg = test::tiny_model(v.size());
  Transformer<double> m(cfg, 8);
  const auto batch = mmt_batch(v);
  // Row 0 of the batch: source "a b c" and decoder prefix "LG d".
  const std::vector<TokenId> enc(batch.encoder_tokens.begin(), batch.encoder_tokens.begin() + 4);
  const std::vector<TokenId> prefix(batch.decoder_input.begin(), batch.decoder_input.begin() + 2);
  ad::Tape<double> tape(false);
  const auto p = tape.bind(m.parameters());
  std::vector<BatchRow> rows = {layout_mmt(v.encode("a b c"), v.encode("d"), 0, 1, v, 24)};
  const auto single = collate(Task::translation, rows);
  const auto lp = ad::log_softmax(m.forward_mmt(tape, p, single, nullptr).decoder_logits).value();
  DecodeSession<double> session(m, enc);
  const auto next = session.next_log_probs({prefix});
  REQUIRE(next.size() == 1);
  for (std::size_t c = 0; c < v.size(); ++c) CHECK(next[0][c] == doctest::Approx(lp.at(1, c)).epsilon(1e-10));
}
