// SPDX-License-Identifier: Apache-2.0
#include "mmtlab/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "mmtlab/error.hpp"

namespace mmtlab {

namespace {

std::mt19937_64 seeded_engine(std::uint64_t seed, std::uint64_t stream_id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream_id),
                    static_cast<std::uint32_t>(stream_id >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id), engine_(seeded_engine(seed, stream_id)) {}

double RngStream::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t RngStream::uniform_index(std::size_t n) {
  if (n == 0) throw InvalidArgument("uniform_index: empty range");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  // Rejection keeps the draw unbiased for any n.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return static_cast<std::size_t>(x % bound);
}

double RngStream::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string RngStream::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void RngStream::restore(const std::string& state) {
  std::istringstream is(state);
  is >> engine_;
  if (!is) throw InvalidArgument("RngStream::restore: malformed engine state");
}

}  // namespace mmtlab
