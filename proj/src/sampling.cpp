// SPDX-License-Identifier: Apache-2.0
#include "mmtlab/sampling.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "mmtlab/error.hpp"

namespace mmtlab {

void SamplingConfig::validate() const {
  if (!(translation_temperature > 0.0) || !(monolingual_temperature > 0.0)) {
    throw InvalidArgument("SamplingConfig: temperatures must be positive");
  }
  if (!(mix_ratio >= 0.0 && mix_ratio <= 1.0)) throw InvalidArgument("SamplingConfig: mix ratio outside [0, 1]");
}

std::vector<double> temperature_probabilities(std::span<const std::size_t> sizes, double temperature) {
  if (sizes.empty()) throw InvalidArgument("temperature sampling: empty pool");
  if (!(temperature > 0.0)) throw InvalidArgument("temperature sampling: temperature must be positive");
  std::vector<double> p(sizes.size());
  double z = 0.0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0) throw InvalidArgument(fmt::format("temperature sampling: language {} has no data", i));
    p[i] = std::pow(static_cast<double>(sizes[i]), 1.0 / temperature);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

std::size_t sample_categorical(std::span<const double> probs, RngStream& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return probs.size() - 1;
}

LanguageId sample_language(const SamplingConfig& cfg, Pool pool, RngStream& rng) {
  const auto& sizes = pool == Pool::translation ? cfg.parallel_sizes : cfg.monolingual_sizes;
  const double t = pool == Pool::translation ? cfg.translation_temperature : cfg.monolingual_temperature;
  const auto p = temperature_probabilities(sizes, t);
  return sample_categorical(p, rng);
}

namespace {

BatchRow make_row(const TrainingCorpus& corpus, Task task, LanguageId lang, const StreamOptions& options,
                  RngStream& rng) {
  const auto& data = corpus.languages.at(lang);
  if (task == Task::translation) {
    if (data.train_source.empty()) throw InvalidArgument("no parallel data for " + data.code);
    const std::size_t i = rng.uniform_index(data.train_source.size());
    BatchRow row = layout_mmt(data.train_source[i], data.train_target[i], corpus.source_language(lang),
                              corpus.target_language(lang), corpus.vocab, options.max_positions, options.tag_policy);
    row.language = lang;
    return row;
  }
  if (data.denoise.empty()) throw InvalidArgument("no monolingual data for " + data.code);
  const std::size_t i = rng.uniform_index(data.denoise.size());
  const auto noised = noise_sentence(data.denoise[i], lang, options.noise, corpus.vocab, rng);
  return layout_cd(noised, corpus.vocab, options.max_positions);
}

}  // namespace

Batch sample_batch(const TrainingCorpus& corpus, Task task, const std::function<LanguageId(RngStream&)>& pick_language,
                   const StreamOptions& options, RngStream& rng) {
  std::vector<BatchRow> rows;
  std::size_t src = 0;
  std::size_t tgt = 0;
  for (;;) {
    BatchRow row = make_row(corpus, task, pick_language(rng), options, rng);
    const std::size_t s = std::max(src, row.encoder_input.size());
    const std::size_t t = std::max(tgt, row.target.size());
    if (!rows.empty() && (rows.size() + 1) * (s + t) > options.batch_tokens) break;
    src = s;
    tgt = t;
    rows.push_back(std::move(row));
  }
  return collate(task, rows);
}

std::vector<Batch> dev_batches(const TrainingCorpus& corpus, LanguageId lang, const StreamOptions& options) {
  const auto& data = corpus.languages.at(lang);
  std::vector<Batch> out;
  std::vector<BatchRow> rows;
  std::size_t src = 0;
  std::size_t tgt = 0;
  for (std::size_t i = 0; i < data.dev_source.size(); ++i) {
    BatchRow row = layout_mmt(data.dev_source[i], data.dev_target[i], corpus.source_language(lang),
                              corpus.target_language(lang), corpus.vocab, options.max_positions, options.tag_policy);
    row.language = lang;
    const std::size_t s = std::max(src, row.encoder_input.size());
    const std::size_t t = std::max(tgt, row.target.size());
    if (!rows.empty() && (rows.size() + 1) * (s + t) > options.batch_tokens) {
      out.push_back(collate(Task::translation, rows));
      rows.clear();
      src = row.encoder_input.size();
      tgt = row.target.size();
    } else {
      src = s;
      tgt = t;
    }
    rows.push_back(std::move(row));
  }
  if (!rows.empty()) out.push_back(collate(Task::translation, rows));
  return out;
}

MixedStream::MixedStream(const TrainingCorpus& corpus, SamplingConfig sampling, StreamOptions options)
    : corpus_(&corpus), sampling_(std::move(sampling)), options_(std::move(options)) {
  if (sampling_.parallel_sizes.empty()) sampling_.parallel_sizes = corpus.parallel_sizes();
  if (sampling_.monolingual_sizes.empty()) sampling_.monolingual_sizes = corpus.denoise_sizes();
  sampling_.validate();
  options_.noise.validate();
  if (sampling_.parallel_sizes.size() != corpus.languages.size() ||
      sampling_.monolingual_sizes.size() != corpus.languages.size()) {
    throw InvalidArgument("MixedStream: corpus sizes do not match the language count");
  }
  if (sampling_.mix_ratio < 1.0) (void)temperature_probabilities(sampling_.parallel_sizes, 1.0);
  if (sampling_.mix_ratio > 0.0) (void)temperature_probabilities(sampling_.monolingual_sizes, 1.0);
}

Batch MixedStream::batch_at(std::uint64_t index) const {
  RngStream rng(options_.seed, make_stream_id(StreamPurpose::data, index));
  const Task task = rng.uniform() < sampling_.mix_ratio ? Task::denoising : Task::translation;
  const LanguageId lang =
      sample_language(sampling_, task == Task::translation ? Pool::translation : Pool::monolingual, rng);
  return sample_batch(*corpus_, task, [lang](RngStream&) { return lang; }, options_, rng);
}

}  // namespace mmtlab
