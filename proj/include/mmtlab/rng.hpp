// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

namespace mmtlab {

// Stream identifiers are composed from a purpose tag and a counter so that
// every consumer of randomness owns a disjoint, reproducible stream.
enum class StreamPurpose : std::uint64_t {
  init = 1,
  dropout = 2,
  data = 3,
  analysis = 4,
  corpus = 5,
  test = 15,
};

constexpr std::uint64_t make_stream_id(StreamPurpose purpose, std::uint64_t index,
                                       std::uint64_t sub = 0) {
  return (static_cast<std::uint64_t>(purpose) << 56) ^ (sub << 40) ^ index;
}

/// Seeded random stream. Identical (seed, stream_id) pairs reproduce identical
/// draws; distinct stream ids seed the engine through distinct seed sequences.
///
/// Only the raw 64-bit engine output is taken from the standard library. The
/// conversions to doubles, indices, and normals are done here because the
/// standard distributions are implementation-defined.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);
  /// Standard normal via Box-Muller.
  double normal();

  /// Engine state as text, for checkpoints and tests.
  std::string state() const;
  void restore(const std::string& state);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
};

}  // namespace mmtlab
