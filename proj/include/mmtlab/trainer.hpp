// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmtlab/batch.hpp"
#include "mmtlab/corpus.hpp"
#include "mmtlab/losses.hpp"
#include "mmtlab/model.hpp"
#include "mmtlab/optimizer.hpp"
#include "mmtlab/sampling.hpp"

namespace mmtlab {

struct TrainConfig {
  std::size_t K = 2;  // forward passes per batch when an ID term is on
  double alpha = 5.0;
  LossToggles toggles;
  AdamConfig adam;
  std::uint64_t warmup_steps = 400;
  std::uint64_t max_steps = 5000;
  std::size_t patience = 10;  // evaluations without dev-loss improvement
  std::uint64_t eval_interval = 250;
  std::size_t batch_tokens = 2048;
  std::uint64_t seed = 1;
  std::size_t beam_size = 5;
  double length_penalty = 1.0;
  double label_smoothing = 0.0;
  bool early_stopping = true;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainState {
  std::uint64_t step = 0;
  double best_dev_loss = std::numeric_limits<double>::infinity();
  std::uint64_t best_step = 0;
  std::size_t evals_since_best = 0;
  bool stopped_early = false;

  nlohmann::json to_json() const;
  static TrainState from_json(const nlohmann::json& j);
};

struct DevMetrics {
  double loss = 0.0;
  double token_accuracy = 0.0;
  std::size_t tokens = 0;
};

struct TrainResult {
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::filesystem::path log;
  TrainState state;
  DevMetrics final_dev;
};

inline constexpr const char* kTrainLogHeader = "step,task,l_mmt,l_e,l_d,l_id_mmt,l_id_e,l_id_d,total,lr";
inline constexpr const char* kBestCheckpoint = "checkpoint_best.ckpt";
inline constexpr const char* kLastCheckpoint = "checkpoint_last.ckpt";
inline constexpr const char* kTrainLog = "train_log.csv";
inline constexpr const char* kEvalLog = "eval_log.csv";

/// One CSV row. Disabled terms are empty fields; enabled terms that the
/// batch's task does not exercise are 0.
std::string format_log_row(std::uint64_t step, Task task, const LossBundle& bundle, const LossToggles& toggles,
                           double lr);

/// The per-batch training loss: K forwards with dropout streams derived
/// from (config.seed, step, k), the enabled task losses averaged over passes,
/// plus alpha times each enabled X-divergence term. `terms` receives the
/// logged values.
template <class T>
ad::Var<T> training_objective(const Transformer<T>& model, ad::Tape<T>& tape, std::span<const ad::Var<T>> params,
                              const Batch& batch, const TrainConfig& config, std::uint64_t step,
                              LossBundle* terms = nullptr);

/// K-pass training over the mixed stream. Batch i of the stream feeds step
/// i + 1, and the dropout stream of pass k at step s is derived from
/// (seed, s, k), so a run resumes exactly from (seed, step, parameters,
/// optimizer moments).
template <class T>
class Trainer {
 public:
  Trainer(Transformer<T>& model, const TrainingCorpus& corpus, TrainConfig config, SamplingConfig sampling,
          StreamOptions stream);

  /// K forwards with distinct dropout streams, one backward over the composed
  /// loss, one optimizer update. Advances the step counter.
  LossBundle train_step(const Batch& batch);

  /// Teacher-forced loss and token accuracy over every dev set, dropout off.
  DevMetrics evaluate_dev();

  /// Runs until max_steps or early stop, writing logs and checkpoints into
  /// `run_dir`. With `resume` the last checkpoint there is restored first.
  TrainResult train(const std::filesystem::path& run_dir, bool resume = false);

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores parameters, optimizer moments and train state.
  void load_checkpoint(const std::filesystem::path& path);

  const TrainState& state() const { return state_; }
  const TrainConfig& config() const { return config_; }
  const MixedStream& stream() const { return stream_; }
  double current_lr() const;

 private:
  Transformer<T>* model_;
  const TrainingCorpus* corpus_;
  TrainConfig config_;
  MixedStream stream_;
  Adam<T> adam_;
  TrainState state_;
  std::vector<Batch> dev_;
};

/// Dev batches of every language, in language order.
std::vector<Batch> all_dev_batches(const TrainingCorpus& corpus, const StreamOptions& options);

/// Teacher-forced translation loss and token accuracy, dropout off.
template <class T>
DevMetrics evaluate_batches(const Transformer<T>& model, std::span<const Batch> batches);

/// Checkpoint metadata shared by the trainer and the CLI.
nlohmann::json checkpoint_meta(const ModelConfig& model, int precision, const TrainConfig& train,
                               const TrainState& state);

struct LanguageBleu {
  std::string code;
  std::string category;
  double bleu = 0.0;
  std::size_t sentences = 0;
  std::size_t incomplete = 0;  // hypotheses that never emitted EOS
};

/// Beam-search BLEU on each language's dev set. `max_sentences` 0 means all.
template <class T>
std::vector<LanguageBleu> evaluate_bleu(const Transformer<T>& model, const TrainingCorpus& corpus, TagPolicy policy,
                                        std::size_t beam, double length_penalty, std::size_t max_sentences = 0,
                                        std::size_t threads = 1);

extern template class Trainer<float>;
extern template class Trainer<double>;

}  // namespace mmtlab
