// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include "mmtlab/checkpoint.hpp"
#include "mmtlab/config.hpp"
#include "mmtlab/corpus.hpp"
#include "mmtlab/model.hpp"
#include "mmtlab/trainer.hpp"

namespace mmtlab {

inline constexpr const char* kRunConfig = "config.json";
inline constexpr const char* kRunVocab = "vocab.txt";

/// Loads the manifest named by the config. Relative corpus paths resolve
/// against the manifest's directory.
TrainingCorpus load_experiment_corpus(const ExperimentConfig& config, const Vocabulary* vocab = nullptr);

/// Trains one run into `run_dir`: writes config.json and vocab.txt, then
/// logs and checkpoints. With `resume` an existing run continues from its
/// last checkpoint and keeps its vocabulary.
TrainResult run_training(ExperimentConfig config, const std::filesystem::path& run_dir, bool resume = false);

/// A finished run: its config, corpus (tokenized with the run's vocabulary)
/// and one checkpoint.
struct LoadedRun {
  std::filesystem::path run_dir;
  ExperimentConfig config;
  TrainingCorpus corpus;
  std::filesystem::path checkpoint_path;
  std::string checkpoint_sha256;
  Checkpoint checkpoint;

  int precision() const { return checkpoint.meta.at("precision").get<int>(); }
  ModelConfig model_config() const { return ModelConfig::from_json(checkpoint.meta.at("model")); }
};

/// `which` is "best", "last", or a path to a checkpoint file.
LoadedRun load_run(const std::filesystem::path& run_dir, const std::string& which = "best");

/// Rebuilds the model stored in the run's checkpoint.
template <class T>
Transformer<T> load_model(const LoadedRun& run);

}  // namespace mmtlab
