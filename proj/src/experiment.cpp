// SPDX-License-Identifier: Apache-2.0
#include "mmtlab/experiment.hpp"

#include <fmt/format.h>

#include "mmtlab/error.hpp"

namespace mmtlab {

TrainingCorpus load_experiment_corpus(const ExperimentConfig& config, const Vocabulary* vocab) {
  if (config.manifest.empty()) throw UsageError("config: no corpus manifest given");
  const auto manifest = Manifest::load(config.manifest);
  return load_corpus(manifest, config.manifest.parent_path(), config.direction, vocab);
}

namespace {

template <class T>
TrainResult train_at(const ExperimentConfig& config, const TrainingCorpus& corpus, const std::filesystem::path& run_dir,
                     bool resume) {
  Transformer<T> model(config.model, config.train.seed);
  Trainer<T> trainer(model, corpus, config.train, config.sampling, config.stream_options());
  return trainer.train(run_dir, resume);
}

}  // namespace

TrainResult run_training(ExperimentConfig config, const std::filesystem::path& run_dir, bool resume) {
  config.validate();
  if (!config.manifest.empty()) config.manifest = std::filesystem::absolute(config.manifest).lexically_normal();
  config.output_dir = run_dir;

  const auto vocab_path = run_dir / kRunVocab;
  const bool reuse_vocab = resume && std::filesystem::exists(vocab_path);
  TrainingCorpus corpus;
  if (reuse_vocab) {
    const auto vocab = Vocabulary::load(vocab_path);
    corpus = load_experiment_corpus(config, &vocab);
  } else {
    corpus = load_experiment_corpus(config);
  }
  if (config.model.vocab_size != 0 && config.model.vocab_size != corpus.vocab.size()) {
    throw UsageError(fmt::format("config: model.vocab_size {} does not match the corpus vocabulary ({})",
                                 config.model.vocab_size, corpus.vocab.size()));
  }
  config.model.vocab_size = corpus.vocab.size();
  config.model.validate();

  std::filesystem::create_directories(run_dir);
  config.save(run_dir / kRunConfig);
  if (!reuse_vocab) corpus.vocab.save(vocab_path);

  return config.precision == 64 ? train_at<double>(config, corpus, run_dir, resume)
                                : train_at<float>(config, corpus, run_dir, resume);
}

LoadedRun load_run(const std::filesystem::path& run_dir, const std::string& which) {
  LoadedRun run;
  run.run_dir = run_dir;
  const auto config_path = run_dir / kRunConfig;
  if (!std::filesystem::exists(config_path)) throw IoError("no run config at " + config_path.string());
  run.config = ExperimentConfig::load(config_path);

  if (which == "best") {
    run.checkpoint_path = run_dir / kBestCheckpoint;
  } else if (which == "last") {
    run.checkpoint_path = run_dir / kLastCheckpoint;
  } else {
    run.checkpoint_path = which;
  }
  if (!std::filesystem::exists(run.checkpoint_path)) {
    throw IoError("missing checkpoint " + run.checkpoint_path.string());
  }
  run.checkpoint = read_checkpoint(run.checkpoint_path);
  if (run.checkpoint.meta.value("format", std::string()) != "mmtlab-checkpoint") {
    throw IoError(run.checkpoint_path.string() + " is not an mmtlab checkpoint");
  }
  run.checkpoint_sha256 = file_sha256(run.checkpoint_path);

  const auto vocab = Vocabulary::load(run_dir / kRunVocab);
  run.corpus = load_experiment_corpus(run.config, &vocab);
  return run;
}

template <class T>
Transformer<T> load_model(const LoadedRun& run) {
  const auto cfg = run.model_config();
  if (cfg.vocab_size != run.corpus.vocab.size()) {
    throw IoError("checkpoint vocabulary size does not match the run vocabulary");
  }
  Transformer<T> model(cfg, run.config.train.seed);
  load_parameters(run.checkpoint, model.parameters());
  return model;
}

template Transformer<float> load_model(const LoadedRun&);
template Transformer<double> load_model(const LoadedRun&);

}  // namespace mmtlab
