// SPDX-License-Identifier: Apache-2.0
#include "mmtlab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <fmt/format.h>

#include "mmtlab/beam_search.hpp"
#include "mmtlab/bleu.hpp"
#include "mmtlab/checkpoint.hpp"
#include "mmtlab/error.hpp"

namespace mmtlab {

void TrainConfig::validate() const {
  if (K < 1) throw InvalidArgument("TrainConfig: K must be at least 1");
  if (!(alpha >= 0.0)) throw InvalidArgument("TrainConfig: alpha must be non-negative");
  if (patience < 1) throw InvalidArgument("TrainConfig: patience must be at least 1");
  if (eval_interval < 1) throw InvalidArgument("TrainConfig: eval_interval must be at least 1");
  if (batch_tokens == 0) throw InvalidArgument("TrainConfig: batch_tokens must be positive");
  if (beam_size < 1) throw InvalidArgument("TrainConfig: beam_size must be at least 1");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw InvalidArgument("TrainConfig: label_smoothing outside [0, 1)");
  if (!toggles.mmt) throw InvalidArgument("TrainConfig: the translation loss must be enabled");
  toggles.validate();
  adam.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"K", K},
          {"alpha", alpha},
          {"toggles", toggles.to_json()},
          {"adam", adam.to_json()},
          {"warmup_steps", warmup_steps},
          {"max_steps", max_steps},
          {"patience", patience},
          {"eval_interval", eval_interval},
          {"batch_tokens", batch_tokens},
          {"seed", seed},
          {"beam_size", beam_size},
          {"length_penalty", length_penalty},
          {"label_smoothing", label_smoothing},
          {"early_stopping", early_stopping}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.K = j.value("K", c.K);
  c.alpha = j.value("alpha", c.alpha);
  if (j.contains("toggles")) c.toggles = LossToggles::from_json(j.at("toggles"));
  if (j.contains("adam")) c.adam = AdamConfig::from_json(j.at("adam"));
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.patience = j.value("patience", c.patience);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  c.batch_tokens = j.value("batch_tokens", c.batch_tokens);
  c.seed = j.value("seed", c.seed);
  c.beam_size = j.value("beam_size", c.beam_size);
  c.length_penalty = j.value("length_penalty", c.length_penalty);
  c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
  c.early_stopping = j.value("early_stopping", c.early_stopping);
  return c;
}

nlohmann::json TrainState::to_json() const {
  nlohmann::json j = {{"step", step},
                      {"best_step", best_step},
                      {"evals_since_best", evals_since_best},
                      {"stopped_early", stopped_early}};
  // JSON has no infinity.
  j["best_dev_loss"] = std::isfinite(best_dev_loss) ? nlohmann::json(best_dev_loss) : nlohmann::json(nullptr);
  return j;
}

TrainState TrainState::from_json(const nlohmann::json& j) {
  TrainState s;
  s.step = j.value("step", s.step);
  s.best_step = j.value("best_step", s.best_step);
  s.evals_since_best = j.value("evals_since_best", s.evals_since_best);
  s.stopped_early = j.value("stopped_early", s.stopped_early);
  if (j.contains("best_dev_loss") && !j.at("best_dev_loss").is_null()) s.best_dev_loss = j.at("best_dev_loss");
  return s;
}

std::string format_log_row(std::uint64_t step, Task task, const LossBundle& b, const LossToggles& t, double lr) {
  auto field = [](bool on, double v) { return on ? fmt::format("{}", v) : std::string(); };
  return fmt::format("{},{},{},{},{},{},{},{},{},{}", step, task_name(task), field(t.mmt, b.l_mmt), field(t.e, b.l_e),
                     field(t.d, b.l_d), field(t.id_mmt, b.l_id_mmt), field(t.id_e, b.l_id_e), field(t.id_d, b.l_id_d),
                     b.total, lr);
}

nlohmann::json checkpoint_meta(const ModelConfig& model, int precision, const TrainConfig& train,
                               const TrainState& state) {
  return {{"format", "mmtlab-checkpoint"},
          {"precision", precision},
          {"model", model.to_json()},
          {"train", train.to_json()},
          {"state", state.to_json()},
          // Every random draw after this point derives from (seed, step).
          {"rng", {{"seed", train.seed}, {"next_step", state.step + 1}}}};
}

namespace {

template <class T>
ad::Var<T> task_loss(ad::Var<T> logits, const Batch& batch, double smoothing) {
  auto nll = ad::masked_cross_entropy(logits, std::span<const std::int32_t>(batch.target),
                                      std::span<const std::uint8_t>(batch.score_mask));
  if (smoothing == 0.0) return nll;
  std::vector<std::size_t> scored;
  for (std::size_t r = 0; r < batch.score_mask.size(); ++r) {
    if (batch.score_mask[r]) scored.push_back(r);
  }
  if (scored.empty()) return nll;
  auto lp = ad::gather_rows(ad::log_softmax(logits), std::span<const std::size_t>(scored));
  const double uniform = -1.0 / static_cast<double>(scored.size() * logits.cols());
  return ad::scale(nll, static_cast<T>(1.0 - smoothing)) + ad::scale(ad::sum(lp), static_cast<T>(smoothing * uniform));
}

template <class T>
ad::Var<T> mean_of(const std::vector<ad::Var<T>>& xs) {
  ad::Var<T> s = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) s = s + xs[i];
  return ad::scale(s, static_cast<T>(1.0 / static_cast<double>(xs.size())));
}

}  // namespace

template <class T>
Trainer<T>::Trainer(Transformer<T>& model, const TrainingCorpus& corpus, TrainConfig config, SamplingConfig sampling,
                    StreamOptions stream)
    : model_(&model),
      corpus_(&corpus),
      config_(std::move(config)),
      stream_(corpus,
              [&] {
                if (!config_.toggles.any_denoising()) sampling.mix_ratio = 0.0;
                return sampling;
              }(),
              [&] {
                stream.batch_tokens = config_.batch_tokens;
                stream.seed = config_.seed;
                stream.max_positions = model.config().max_positions;
                return stream;
              }()),
      adam_(model.parameters(), config_.adam) {
  config_.validate();
  if (corpus.vocab.size() != model.config().vocab_size) {
    throw InvalidArgument("Trainer: model vocabulary size does not match the corpus");
  }
  StreamOptions dev_opts = stream;
  dev_opts.batch_tokens = config_.batch_tokens;
  dev_opts.max_positions = model.config().max_positions;
  dev_ = all_dev_batches(corpus, dev_opts);
}

template <class T>
double Trainer<T>::current_lr() const {
  return learning_rate(state_.step, config_.adam.peak_lr, config_.warmup_steps);
}

template <class T>
ad::Var<T> training_objective(const Transformer<T>& model, ad::Tape<T>& tape, std::span<const ad::Var<T>> params,
                              const Batch& batch, const TrainConfig& config, std::uint64_t step, LossBundle* terms_out) {
  const auto& tg = config.toggles;
  const std::size_t passes = (config.K >= 2 && tg.any_id()) ? config.K : 1;
  const T alpha = static_cast<T>(config.alpha);

  LossBundle terms;
  ad::Var<T> total;
  bool have_total = false;
  auto add = [&](ad::Var<T> v) {
    total = have_total ? total + v : v;
    have_total = true;
  };
  auto pass_rng = [&](std::size_t k) { return RngStream(config.seed, make_stream_id(StreamPurpose::dropout, step, k)); };

  if (batch.task == Task::translation) {
    std::vector<ad::Var<T>> logits;
    std::vector<ad::Var<T>> losses;
    for (std::size_t k = 0; k < passes; ++k) {
      auto rng = pass_rng(k);
      logits.push_back(model.forward_mmt(tape, params, batch, &rng).decoder_logits);
      losses.push_back(task_loss(logits.back(), batch, config.label_smoothing));
    }
    auto l_mmt = mean_of(losses);
    terms.l_mmt = static_cast<double>(l_mmt.item());
    add(l_mmt);
    if (tg.id_mmt && passes >= 2) {
      auto id = ad::x_divergence(std::span<const ad::Var<T>>(logits), std::span<const std::uint8_t>(batch.score_mask));
      terms.l_id_mmt = static_cast<double>(id.item());
      add(ad::scale(id, alpha));
    }
  } else {
    if (!tg.any_denoising()) throw InvalidArgument("train_step: denoising batch with no denoising loss enabled");
    std::vector<ad::Var<T>> enc_logits, dec_logits, enc_losses, dec_losses;
    for (std::size_t k = 0; k < passes; ++k) {
      auto rng = pass_rng(k);
      auto out = model.forward_cd(tape, params, batch, &rng);
      enc_logits.push_back(*out.encoder_logits);
      dec_logits.push_back(out.decoder_logits);
      if (tg.e) enc_losses.push_back(task_loss(enc_logits.back(), batch, config.label_smoothing));
      if (tg.d) dec_losses.push_back(task_loss(dec_logits.back(), batch, config.label_smoothing));
    }
    const std::span<const std::uint8_t> mask(batch.score_mask);
    if (tg.e) {
      auto l = mean_of(enc_losses);
      terms.l_e = static_cast<double>(l.item());
      add(l);
    }
    if (tg.d) {
      auto l = mean_of(dec_losses);
      terms.l_d = static_cast<double>(l.item());
      add(l);
    }
    if (tg.id_e && passes >= 2) {
      auto id = ad::x_divergence(std::span<const ad::Var<T>>(enc_logits), mask);
      terms.l_id_e = static_cast<double>(id.item());
      add(ad::scale(id, alpha));
    }
    if (tg.id_d && passes >= 2) {
      auto id = ad::x_divergence(std::span<const ad::Var<T>>(dec_logits), mask);
      terms.l_id_d = static_cast<double>(id.item());
      add(ad::scale(id, alpha));
    }
  }
  if (terms_out) *terms_out = compose_total(terms, tg, config.alpha);
  return total;
}

template <class T>
LossBundle Trainer<T>::train_step(const Batch& batch) {
  const std::uint64_t step = state_.step + 1;
  auto& store = model_->parameters();
  store.zero_grad();
  ad::Tape<T> tape;
  const auto params = tape.bind(store);
  LossBundle terms;
  const auto total = training_objective(*model_, tape, std::span<const ad::Var<T>>(params), batch, config_, step, &terms);
  if (!std::isfinite(static_cast<double>(total.item()))) {
    throw NumericError(fmt::format("non-finite loss at step {}", step));
  }
  tape.backward(total);
  const double lr = learning_rate(step, config_.adam.peak_lr, config_.warmup_steps);
  adam_.step(store, lr);
  state_.step = step;
  return terms;
}

template <class T>
DevMetrics Trainer<T>::evaluate_dev() {
  return evaluate_batches(*model_, std::span<const Batch>(dev_));
}

std::vector<Batch> all_dev_batches(const TrainingCorpus& corpus, const StreamOptions& options) {
  std::vector<Batch> out;
  for (LanguageId l = 0; l < corpus.languages.size(); ++l) {
    for (auto& b : dev_batches(corpus, l, options)) out.push_back(std::move(b));
  }
  return out;
}

template <class T>
DevMetrics evaluate_batches(const Transformer<T>& model, std::span<const Batch> batches) {
  DevMetrics m;
  double nll = 0.0;
  std::size_t correct = 0;
  ad::Tape<T> tape(false);
  std::vector<ad::Var<T>> params;
  const auto& store = model.parameters();
  for (std::size_t i = 0; i < store.entry_count(); ++i) {
    const auto& e = store.entry(i);
    Tensor<T> snapshot = e.value;
    for (std::size_t j = 0; j < snapshot.size(); ++j) {
      if (!e.keep[j]) snapshot[j] = T(0);
    }
    params.push_back(tape.constant(std::move(snapshot)));
  }
  for (const auto& batch : batches) {
    const auto out = model.forward_mmt(tape, params, batch, nullptr);
    const auto lp = ad::log_softmax(out.decoder_logits);
    const auto& v = lp.value();
    for (std::size_t r = 0; r < v.rows(); ++r) {
      if (!batch.score_mask[r]) continue;
      const T* row = v.data() + r * v.cols();
      nll -= static_cast<double>(row[batch.target[r]]);
      const auto best = static_cast<std::size_t>(std::max_element(row, row + v.cols()) - row);
      if (best == static_cast<std::size_t>(batch.target[r])) ++correct;
      ++m.tokens;
    }
  }
  if (m.tokens > 0) {
    m.loss = nll / static_cast<double>(m.tokens);
    m.token_accuracy = static_cast<double>(correct) / static_cast<double>(m.tokens);
  }
  return m;
}

template <class T>
void Trainer<T>::save_checkpoint(const std::filesystem::path& path) const {
  Checkpoint ckpt;
  ckpt.meta = checkpoint_meta(model_->config(), sizeof(T) == 4 ? 32 : 64, config_, state_);
  store_parameters(ckpt, model_->parameters());
  adam_.save(ckpt, model_->parameters());
  write_checkpoint(path, ckpt);
}

template <class T>
void Trainer<T>::load_checkpoint(const std::filesystem::path& path) {
  const auto ckpt = read_checkpoint(path);
  load_parameters(ckpt, model_->parameters());
  adam_.load(ckpt, model_->parameters());
  state_ = TrainState::from_json(ckpt.meta.at("state"));
}

namespace {

// Drops log rows past `step` so a resumed run appends where the checkpoint left off.
void truncate_log(const std::filesystem::path& path, std::uint64_t step) {
  if (!std::filesystem::exists(path)) return;
  const auto lines = read_lines(path);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i > 0 && std::stoull(lines[i].substr(0, lines[i].find(','))) > step) break;
    os << lines[i] << '\n';
  }
}

}  // namespace

template <class T>
TrainResult Trainer<T>::train(const std::filesystem::path& run_dir, bool resume) {
  std::filesystem::create_directories(run_dir);
  TrainResult result;
  result.best_checkpoint = run_dir / kBestCheckpoint;
  result.last_checkpoint = run_dir / kLastCheckpoint;
  result.log = run_dir / kTrainLog;
  const auto eval_path = run_dir / kEvalLog;

  const bool resuming = resume && std::filesystem::exists(result.last_checkpoint);
  if (resuming) {
    load_checkpoint(result.last_checkpoint);
    truncate_log(result.log, state_.step);
    truncate_log(eval_path, state_.step);
  }
  std::ofstream log(result.log, resuming ? std::ios::app : std::ios::trunc);
  std::ofstream eval_log(eval_path, resuming ? std::ios::app : std::ios::trunc);
  if (!log || !eval_log) throw IoError("cannot open logs in " + run_dir.string());
  if (!resuming) {
    log << kTrainLogHeader << '\n';
    eval_log << "step,dev_loss,dev_token_accuracy,best\n";
  }

  auto diagnose = [&](const nlohmann::json& diag) {
    std::ofstream(run_dir / "diagnostic.json") << diag.dump(2) << '\n';
  };
  auto evaluate = [&] {
    try {
      result.final_dev = evaluate_dev();
    } catch (const NumericError& e) {
      diagnose({{"step", state_.step}, {"task", "dev_evaluation"}, {"error", e.what()}});
      throw;
    }
    const bool improved = result.final_dev.loss < state_.best_dev_loss;
    if (improved) {
      state_.best_dev_loss = result.final_dev.loss;
      state_.best_step = state_.step;
      state_.evals_since_best = 0;
    } else {
      ++state_.evals_since_best;
    }
    if (config_.early_stopping && state_.evals_since_best >= config_.patience) state_.stopped_early = true;
    eval_log << fmt::format("{},{},{},{}\n", state_.step, result.final_dev.loss, result.final_dev.token_accuracy,
                            improved ? 1 : 0);
    eval_log.flush();
    if (improved) save_checkpoint(result.best_checkpoint);
    save_checkpoint(result.last_checkpoint);
  };

  if (!resuming) evaluate();
  while (state_.step < config_.max_steps && !state_.stopped_early) {
    const Batch batch = stream_.batch_at(state_.step);
    LossBundle bundle;
    try {
      bundle = train_step(batch);
    } catch (const NumericError& e) {
      diagnose({{"step", state_.step + 1},
                {"task", std::string(task_name(batch.task))},
                {"rows", batch.rows},
                {"src_len", batch.src_len},
                {"tgt_len", batch.tgt_len},
                {"languages", batch.languages},
                {"error", e.what()}});
      throw;
    }
    log << format_log_row(state_.step, batch.task, bundle, config_.toggles, current_lr()) << '\n';
    if (state_.step % config_.eval_interval == 0 || state_.step == config_.max_steps) {
      log.flush();
      evaluate();
    }
  }
  log.flush();
  result.state = state_;
  return result;
}

template <class T>
std::vector<LanguageBleu> evaluate_bleu(const Transformer<T>& model, const TrainingCorpus& corpus, TagPolicy policy,
                                        std::size_t beam, double length_penalty, std::size_t max_sentences,
                                        std::size_t threads) {
  std::vector<LanguageBleu> out;
  threads = std::max<std::size_t>(threads, 1);
  for (LanguageId l = 0; l < corpus.languages.size(); ++l) {
    const auto& data = corpus.languages[l];
    std::size_t n = data.dev_source.size();
    if (max_sentences > 0) n = std::min(n, max_sentences);
    LanguageBleu lb{data.code, data.category, 0.0, n, 0};
    if (n == 0) {
      out.push_back(lb);
      continue;
    }
    std::vector<std::vector<std::string>> hyps(n), refs(n);
    std::vector<std::uint8_t> incomplete(n, 0);
    auto work = [&](std::size_t first, std::size_t stride) {
      for (std::size_t i = first; i < n; i += stride) {
        const auto row = layout_mmt(data.dev_source[i], data.dev_target[i], corpus.source_language(l),
                                    corpus.target_language(l), corpus.vocab, model.config().max_positions, policy);
        const auto r = translate(model, corpus.vocab, row.encoder_input, row.decoder_input.front(), beam,
                                 length_penalty);
        hyps[i] = corpus.vocab.decode_words(r.tokens);
        refs[i] = corpus.vocab.decode_words(data.dev_target[i]);
        incomplete[i] = r.complete ? 0 : 1;
      }
    };
    if (threads == 1) {
      work(0, 1);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
      for (auto& th : pool) th.join();
    }
    lb.bleu = corpus_bleu(hyps, refs).score;
    for (auto f : incomplete) lb.incomplete += f;
    out.push_back(lb);
  }
  return out;
}

template ad::Var<float> training_objective(const Transformer<float>&, ad::Tape<float>&,
                                          std::span<const ad::Var<float>>, const Batch&, const TrainConfig&,
                                          std::uint64_t, LossBundle*);
template ad::Var<double> training_objective(const Transformer<double>&, ad::Tape<double>&,
                                           std::span<const ad::Var<double>>, const Batch&, const TrainConfig&,
                                           std::uint64_t, LossBundle*);
template class Trainer<float>;
template class Trainer<double>;
template DevMetrics evaluate_batches(const Transformer<float>&, std::span<const Batch>);
template DevMetrics evaluate_batches(const Transformer<double>&, std::span<const Batch>);
template std::vector<LanguageBleu> evaluate_bleu(const Transformer<float>&, const TrainingCorpus&, TagPolicy,
                                                 std::size_t, double, std::size_t, std::size_t);
template std::vector<LanguageBleu> evaluate_bleu(const Transformer<double>&, const TrainingCorpus&, TagPolicy,
                                                 std::size_t, double, std::size_t, std::size_t);

}  // namespace mmtlab
