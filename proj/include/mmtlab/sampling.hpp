// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mmtlab/batch.hpp"
#include "mmtlab/corpus.hpp"
#include "mmtlab/noise.hpp"
#include "mmtlab/rng.hpp"

namespace mmtlab {

enum class Pool { translation, monolingual };

struct SamplingConfig {
  double translation_temperature = 1.0;
  double monolingual_temperature = 10.0 / 7.0;
  // Probability that a batch is a denoising batch.
  double mix_ratio = 0.5;
  std::vector<std::size_t> parallel_sizes;
  std::vector<std::size_t> monolingual_sizes;

  void validate() const;
};

/// p_l = D_l^(1/T) / sum_k D_k^(1/T)
std::vector<double> temperature_probabilities(std::span<const std::size_t> sizes, double temperature);

/// Draws from a discrete distribution by inverse CDF.
std::size_t sample_categorical(std::span<const double> probs, RngStream& rng);

LanguageId sample_language(const SamplingConfig& cfg, Pool pool, RngStream& rng);

struct StreamOptions {
  std::size_t batch_tokens = 2048;
  std::size_t max_positions = 64;
  TagPolicy tag_policy = TagPolicy::target_language;
  NoiseConfig noise;
  std::uint64_t seed = 1;
};

/// Fills a batch of one task up to the padded token budget. `pick_language`
/// chooses the language of each row, `rng` drives every draw.
Batch sample_batch(const TrainingCorpus& corpus, Task task, const std::function<LanguageId(RngStream&)>& pick_language,
                   const StreamOptions& options, RngStream& rng);

/// Dev batches for one language, in corpus order.
std::vector<Batch> dev_batches(const TrainingCorpus& corpus, LanguageId lang, const StreamOptions& options);

/// Endless, seekable sequence of batches. Batch i depends only on (seed, i):
/// its task is denoising with probability mix_ratio and its language comes
/// from the task's temperature distribution.
class MixedStream {
 public:
  MixedStream(const TrainingCorpus& corpus, SamplingConfig sampling, StreamOptions options);

  Batch next() { return batch_at(position_++); }
  Batch batch_at(std::uint64_t index) const;
  std::uint64_t position() const { return position_; }
  void seek(std::uint64_t position) { position_ = position; }

  const SamplingConfig& sampling() const { return sampling_; }

 private:
  const TrainingCorpus* corpus_;
  SamplingConfig sampling_;
  StreamOptions options_;
  std::uint64_t position_ = 0;
};

}  // namespace mmtlab
