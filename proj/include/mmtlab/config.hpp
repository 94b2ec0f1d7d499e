// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmtlab/analysis.hpp"
#include "mmtlab/corpus.hpp"
#include "mmtlab/model.hpp"
#include "mmtlab/noise.hpp"
#include "mmtlab/sampling.hpp"
#include "mmtlab/trainer.hpp"

namespace mmtlab {

inline constexpr int kConfigSchemaVersion = 1;

struct AnalysisConfig {
  std::size_t batches = 50;
  std::size_t batch_tokens = 1024;
  std::uint64_t seed = 7;
  double group_fraction = 0.10;    // high-sensitive share for PCC groups
  double protect_fraction = 0.10;  // most-sensitive share kept during pruning
  SpecificityAggregate aggregate = SpecificityAggregate::max;
  std::vector<double> ratios = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  std::size_t beam = 5;
  std::size_t bleu_max_sentences = 0;  // 0: whole dev set

  nlohmann::json to_json() const;
  static AnalysisConfig from_json(const nlohmann::json& j);
};

/// Everything a run needs. A run directory holds the exact config that
/// produced it (config.json).
struct ExperimentConfig {
  int precision = 32;  // 32 or 64
  Direction direction = Direction::to_pivot;
  std::filesystem::path manifest;
  std::filesystem::path output_dir = "runs/default";
  std::size_t threads = 1;
  ModelConfig model;  // vocab_size 0: taken from the corpus
  TrainConfig train;
  SamplingConfig sampling;
  NoiseConfig noise;
  TagPolicy tag_policy = TagPolicy::target_language;
  AnalysisConfig analysis;

  void validate() const;
  nlohmann::json to_json() const;
  /// Rejects unknown schema versions; missing fields keep their defaults.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  StreamOptions stream_options() const;
};

std::string tag_policy_name(TagPolicy p);
TagPolicy parse_tag_policy(const std::string& s);

}  // namespace mmtlab
