#include <doctest.h>

#include <cmath>
#include <vector>

#include "mmtlab/autodiff.hpp"
#include "mmtlab/gradcheck.hpp"
#include "mmtlab/parameter_store.hpp"
#include "mmtlab/rng.hpp"

using namespace mmtlab;

namespace {

Tensor<double> random_matrix(std::size_t r, std::size_t c, std::uint64_t stream, double scale = 1.0) {
  RngStream rng(99, make_stream_id(StreamPurpose::test, stream));
  Tensor<double> t = Tensor<double>::matrix(r, c);
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

}  // namespace

TEST_CASE("rng streams are reproducible and distinct") {
  RngStream a(5, make_stream_id(StreamPurpose::dropout, 3, 1));
  RngStream b(5, make_stream_id(StreamPurpose::dropout, 3, 1));
  RngStream c(5, make_stream_id(StreamPurpose::dropout, 3, 0));
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs = differs || x != c.next_u64();
  }
  CHECK(differs);
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(a.uniform_index(7) < 7);
  }
  const auto saved = a.state();
  const auto next = a.next_u64();
  a.restore(saved);
  CHECK(a.next_u64() == next);
}

TEST_CASE("quadratic loss has gradient 2w") {
  ParameterStore<double> store;
  store.add("w", Tensor<double>(Shape{3}, std::vector<double>{1, 2, 3}));
  store.add("unused", Tensor<double>(Shape{2}, std::vector<double>{4, 5}));
  ad::Tape<double> tape;
  const auto p = tape.bind(store);
  const auto loss = ad::sum(p[0] * p[0]);
  CHECK(loss.item() == doctest::Approx(14.0));
  tape.backward(loss);
  CHECK(store.entry(0).grad == std::vector<double>{2, 4, 6});
  CHECK(store.entry(1).grad == std::vector<double>{0, 0});
}

TEST_CASE("dropout contract") {
  ad::Tape<double> tape;
  auto x = tape.leaf(Tensor<double>(Shape{1000, 1000}, 1.0));
  SUBCASE("rate 0 is the identity") {
    RngStream rng(1, 1);
    const auto r = ad::dropout(x, 0.0, rng);
    CHECK(r.output.value() == x.value());
  }
  SUBCASE("zero fraction concentrates at the rate") {
    RngStream rng(1, 2);
    const auto r = ad::dropout(x, 0.3, rng);
    std::size_t zeros = 0;
    for (const double v : r.output.value().values()) {
      if (v == 0.0) {
        ++zeros;
      } else {
        CHECK(v == doctest::Approx(1.0 / 0.7));
      }
    }
    CHECK(std::abs(static_cast<double>(zeros) / 1e6 - 0.3) < 0.002);
  }
  SUBCASE("same stream, same mask") {
    RngStream r1(7, make_stream_id(StreamPurpose::dropout, 1, 0));
    RngStream r2(7, make_stream_id(StreamPurpose::dropout, 1, 0));
    CHECK(ad::dropout(x, 0.1, r1).mask == ad::dropout(x, 0.1, r2).mask);
  }
}

TEST_CASE("finite-difference checker on closed forms") {
  ParameterStore<double> store;
  store.add("x", Tensor<double>(Shape{1}, std::vector<double>{3.0}));
  SUBCASE("quadratic") {
    const TapeObjective<double> f = [](ad::Tape<double>&, std::span<const ad::Var<double>> p) {
      return ad::sum(p[0] * p[0]);
    };
    const auto r = finite_difference_check(f, store, {1e-5, 0, 0});
    CHECK(r.max_relative_error < 1e-8);
    CHECK(store.entry(0).value[0] == 3.0);
  }
  SUBCASE("linear") {
    const TapeObjective<double> f = [](ad::Tape<double>&, std::span<const ad::Var<double>> p) {
      return ad::scale(ad::sum(p[0]), 2.5);
    };
    CHECK(finite_difference_check(f, store).max_relative_error < 1e-8);
  }
}

TEST_CASE("op gradients match finite differences") {
  ParameterStore<double> store;
  store.add("a", random_matrix(6, 8, 1));
  store.add("b", random_matrix(8, 8, 2, 0.4));
  store.add("bias", random_matrix(1, 8, 3));
  store.add("gamma", random_matrix(1, 8, 4));
  store.add("beta", random_matrix(1, 8, 5));
  store.add("table", random_matrix(10, 8, 6));
  const std::vector<std::int32_t> ids = {1, 4, 4, 9, 0, 2};
  const std::vector<std::uint8_t> pad = {0, 0, 1, 0, 0, 0};

  const TapeObjective<double> f = [&](ad::Tape<double>&, std::span<const ad::Var<double>> p) {
    auto h = ad::add_bias(ad::matmul(p[0], p[1]), p[2]);
    h = ad::layer_norm(h, p[3], p[4]);
    h = h + ad::embedding(p[5], std::span<const std::int32_t>(ids));
    ad::AttentionShape shape;
    shape.batch = 2;
    shape.query_len = 3;
    shape.key_len = 3;
    shape.heads = 2;
    shape.causal = true;
    shape.key_padding = pad;
    auto att = ad::attention(h, h, h, shape);
    auto r = ad::relu(att - ad::scale(h, 0.3));
    const std::vector<std::size_t> rows = {0, 2, 5};
    auto g = ad::gather_rows(ad::softmax(r), std::span<const std::size_t>(rows));
    const std::vector<ad::Var<double>> parts = {g, ad::log_softmax(h)};
    auto cat = ad::concat_rows(std::span<const ad::Var<double>>(parts));
    return ad::sum(ad::log_clamped(ad::softmax(cat), 1e-9) * cat);
  };
  const auto r = finite_difference_check(f, store);
  CHECK(r.checked == store.element_count());
  CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("masked cross entropy") {
  const std::size_t V = 7;
  ad::Tape<double> tape;
  SUBCASE("uniform logits give ln V") {
    auto logits = tape.leaf(Tensor<double>::matrix(3, V, 0.25));
    const std::vector<std::int32_t> tgt = {1, 2, 3};
    const std::vector<std::uint8_t> mask = {1, 1, 1};
    CHECK(std::abs(ad::masked_cross_entropy(logits, std::span<const std::int32_t>(tgt),
                                            std::span<const std::uint8_t>(mask))
                       .item() -
                   std::log(7.0)) < 1e-9);
  }
  SUBCASE("saturated correct logits") {
    Tensor<double> t = Tensor<double>::matrix(2, V, -10.0);
    t.at(0, 3) = 10.0;
    t.at(1, 5) = 10.0;
    auto logits = tape.leaf(t);
    const std::vector<std::int32_t> tgt = {3, 5};
    const std::vector<std::uint8_t> mask = {1, 1};
    // -log softmax = log(1 + 6 e^-20) per row.
    CHECK(ad::masked_cross_entropy(logits, std::span<const std::int32_t>(tgt), std::span<const std::uint8_t>(mask))
              .item() == doctest::Approx(std::log1p(6.0 * std::exp(-20.0))).epsilon(1e-9));
  }
  SUBCASE("mean over scored rows only") {
    const auto t = random_matrix(4, V, 11);
    auto logits = tape.leaf(t);
    const std::vector<std::int32_t> tgt = {0, 1, 2, 3};
    const std::vector<std::uint8_t> mask = {0, 1, 0, 1};
    auto nll = [&](std::size_t r) {
      double z = 0.0;
      for (std::size_t c = 0; c < V; ++c) z += std::exp(t.at(r, c));
      return std::log(z) - t.at(r, static_cast<std::size_t>(tgt[r]));
    };
    auto loss =
        ad::masked_cross_entropy(logits, std::span<const std::int32_t>(tgt), std::span<const std::uint8_t>(mask));
    CHECK(loss.item() == doctest::Approx((nll(1) + nll(3)) / 2).epsilon(1e-12));
    tape.backward(loss);
    for (std::size_t c = 0; c < V; ++c) {
      CHECK(tape.grad_of(logits)[c] == 0.0);
      CHECK(tape.grad_of(logits)[2 * V + c] == 0.0);
    }
  }
  SUBCASE("no scored rows gives zero") {
    auto logits = tape.leaf(random_matrix(2, V, 12));
    const std::vector<std::int32_t> tgt = {0, 1};
    const std::vector<std::uint8_t> mask = {0, 0};
    CHECK(ad::masked_cross_entropy(logits, std::span<const std::int32_t>(tgt), std::span<const std::uint8_t>(mask))
              .item() == 0.0);
  }
}

TEST_CASE("shape mismatch is an error") {
  ad::Tape<double> tape;
  auto a = tape.leaf(Tensor<double>::matrix(2, 3));
  auto b = tape.leaf(Tensor<double>::matrix(2, 3));
  CHECK_THROWS_AS(ad::matmul(a, b), ShapeError);
}

TEST_CASE("prune mask zeroes forward values and gradients") {
  ParameterStore<double> store;
  store.add("w", Tensor<double>(Shape{4}, std::vector<double>{1, 2, 3, 4}));
  const std::vector<std::uint8_t> keep = {1, 0, 1, 0};
  store.set_prune_mask(keep);
  CHECK(store.pruned_count() == 2);
  ad::Tape<double> tape;
  const auto p = tape.bind(store);
  CHECK(p[0].value().storage() == std::vector<double>{1, 0, 3, 0});
  tape.backward(ad::sum(p[0] * p[0]));
  CHECK(store.entry(0).grad == std::vector<double>{2, 0, 6, 0});
  CHECK(store.flat_index("w", 2) == 2);
}
