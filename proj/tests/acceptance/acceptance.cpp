// Acceptance suite: one PASS/FAIL line per criterion.
//
//   mmtlab_acceptance [--work DIR] [--only 1,2,...] [--steps N] [--seeds N]
//
// Criteria 6 to 9 train six toy runs; the others take seconds.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "mmtlab/analysis.hpp"
#include "mmtlab/commands.hpp"
#include "mmtlab/experiment.hpp"
#include "mmtlab/gradcheck.hpp"
#include "mmtlab/losses.hpp"
#include "mmtlab/report_io.hpp"
#include "mmtlab/synthetic.hpp"
#include "mmtlab/trainer.hpp"

using namespace mmtlab;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

// Data rows of an artifact CSV: comment lines and the header are dropped.
std::vector<std::vector<std::string>> csv_rows(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  bool header = true;
  for (const auto& line : read_lines(p)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    rows.push_back(split(line));
  }
  return rows;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

SyntheticCorpusSpec small_spec() {
  SyntheticCorpusSpec s;
  s.train_sizes = {200, 80, 20, 8};
  s.mono_sizes = {200, 200, 200, 200};
  s.dev_size = 12;
  s.latent_vocab = 16;
  s.max_length = 8;
  return s;
}

ModelConfig small_model(std::size_t vocab, std::size_t d) {
  ModelConfig c;
  c.layers = 2;
  c.heads = 4;
  c.model_dim = d;
  c.ffn_dim = 2 * d;
  c.vocab_size = vocab;
  c.max_positions = 24;
  return c;
}

// ---- 1 ------------------------------------------------------------------

Outcome gradient_check(const fs::path& work) {
  const auto t0 = Clock::now();
  const auto dir = work / "c1";
  const auto manifest = write_synthetic_corpus(small_spec(), dir);
  const auto corpus = load_corpus(Manifest::load(manifest), dir, Direction::to_pivot);
  Transformer<double> model(small_model(corpus.vocab.size(), 32), 1);

  StreamOptions so;
  so.batch_tokens = 24;  // one row per task keeps the full sweep under two minutes
  so.max_positions = 24;
  SamplingConfig sc;
  MixedStream stream(corpus, sc, so);
  Batch mmt, cd;
  for (std::uint64_t i = 0; mmt.rows == 0 || cd.rows == 0; ++i) {
    auto b = stream.batch_at(i);
    auto& slot = b.task == Task::translation ? mmt : cd;
    if (slot.rows == 0) slot = std::move(b);
  }
  TrainConfig tc;
  tc.toggles = LossToggles::preset("cd_id");
  const TapeObjective<double> f = [&](ad::Tape<double>& tape, std::span<const ad::Var<double>> p) {
    return training_objective(model, tape, p, mmt, tc, 1) + training_objective(model, tape, p, cd, tc, 2);
  };
  const auto r = finite_difference_check(f, model.parameters(), {1e-5, 0, 0});
  const double secs = seconds_since(t0);
  const bool pass = r.checked == model.parameter_count() && r.max_relative_error < 1e-4 && secs < 120.0;
  return {pass, fmt::format("{} parameters, max relative error {:.3g}, {:.1f} s", r.checked, r.max_relative_error,
                            secs)};
}

// ---- 2 ------------------------------------------------------------------

Outcome loss_identities() {
  const double xd = x_divergence({{0.75, 0.25}, {0.25, 0.75}});
  const double same = x_divergence({{0.1, 0.2, 0.7}, {0.1, 0.2, 0.7}, {0.1, 0.2, 0.7}});
  const std::size_t V = 1000;
  ad::Tape<double> tape;
  auto logits = tape.leaf(Tensor<double>::matrix(4, V, 0.3));
  const std::vector<std::int32_t> tgt = {1, 17, 400, 999};
  const std::vector<std::uint8_t> mask = {1, 1, 0, 1};
  const double ce = ad::masked_cross_entropy(logits, std::span<const std::int32_t>(tgt),
                                             std::span<const std::uint8_t>(mask))
                        .item();
  const double ce_err = std::abs(ce - std::log(static_cast<double>(V)));
  const bool pass = std::abs(xd - 0.274653) <= 1e-6 && same < 1e-12 && ce_err <= 1e-9;
  return {pass, fmt::format("X-div {:.7f}, identical {:.2g}, uniform CE error {:.2g}", xd, same, ce_err)};
}

// ---- 3 ------------------------------------------------------------------

Outcome layout_alignment(const fs::path& work) {
  const auto dir = work / "c3";
  const auto manifest = write_synthetic_corpus(SyntheticCorpusSpec{}, dir);
  const auto corpus = load_corpus(Manifest::load(manifest), dir, Direction::to_pivot);
  NoiseConfig nc;
  RngStream rng(3, make_stream_id(StreamPurpose::test, 3));
  std::size_t rows = 0, scored = 0, violations = 0;
  for (; rows < 10000; ++rows) {
    const auto lang = static_cast<LanguageId>(rng.uniform_index(corpus.languages.size()));
    const auto& mono = corpus.languages[lang].denoise;
    const auto& words = mono[rng.uniform_index(mono.size())];
    const auto ex = noise_sentence(words, lang, nc, corpus.vocab, rng);
    const auto row = layout_cd(ex, corpus.vocab, 64);
    const std::size_t n = row.target.size();
    if (row.encoder_input.size() != n || row.decoder_input.size() != n || row.score_mask.size() != n) {
      ++violations;
      continue;
    }
    // The clean sequences each head reconstructs, read at its own offsets.
    std::vector<TokenId> enc_clean(ex.original.begin(), ex.original.end());
    std::vector<TokenId> dec_clean = {row.decoder_input.front()};
    dec_clean.insert(dec_clean.end(), ex.original.begin(), ex.original.end());
    for (std::size_t i = 0; i < n; ++i) {
      const bool should_score = i < ex.masked_flags.size() && ex.masked_flags[i];
      if (static_cast<bool>(row.score_mask[i]) != should_score) ++violations;
      if (!row.score_mask[i]) continue;
      ++scored;
      const TokenId enc_target = enc_clean[i];
      const TokenId dec_target = dec_clean[i + 1];
      if (enc_target != dec_target || row.target[i] != enc_target) ++violations;
      if (row.encoder_input[i] != ex.corrupted[i] || row.decoder_input[i + 1] != ex.corrupted[i]) ++violations;
    }
  }
  return {violations == 0, fmt::format("{} rows, {} scored positions, {} violations", rows, scored, violations)};
}

// ---- 4 ------------------------------------------------------------------

Outcome masking_statistics(const fs::path& work) {
  const auto dir = work / "c4";
  const auto manifest = write_synthetic_corpus(SyntheticCorpusSpec{}, dir);
  const auto corpus = load_corpus(Manifest::load(manifest), dir, Direction::to_pivot);
  NoiseConfig nc;
  RngStream rng(4, make_stream_id(StreamPurpose::test, 4));
  std::size_t words = 0, masked = 0, kept = 0, randomized = 0;
  while (words < 100000) {
    const auto lang = static_cast<LanguageId>(rng.uniform_index(corpus.languages.size()));
    const auto& mono = corpus.languages[lang].denoise;
    const auto ex = noise_sentence(mono[rng.uniform_index(mono.size())], lang, nc, corpus.vocab, rng);
    for (const auto a : ex.actions) {
      ++words;
      masked += a == NoiseAction::masked;
      kept += a == NoiseAction::kept;
      randomized += a == NoiseAction::randomized;
    }
  }
  const double n = static_cast<double>(words);
  const double fm = masked / n, fk = kept / n, fr = randomized / n;
  const bool pass = std::abs(fm - 0.24) <= 0.01 && std::abs(fk - 0.03) <= 0.01 && std::abs(fr - 0.03) <= 0.01;
  return {pass, fmt::format("{} words: mask {:.4f}, kept {:.4f}, random {:.4f}", words, fm, fk, fr)};
}

// ---- 5 ------------------------------------------------------------------

Outcome sampling_and_mixing(const fs::path& work) {
  const auto dir = work / "c5";
  auto spec = SyntheticCorpusSpec{};
  spec.mono_sizes = spec.train_sizes;  // skewed monolingual pool as well
  const auto manifest = write_synthetic_corpus(spec, dir);
  const auto corpus = load_corpus(Manifest::load(manifest), dir, Direction::to_pivot);
  const auto sizes = corpus.parallel_sizes();
  const std::size_t L = sizes.size();

  double worst_freq = 0.0, denoise_fraction = 0.0;
  for (const double t_trans : {1.0, 10.0 / 7.0}) {
    SamplingConfig sc;
    sc.translation_temperature = t_trans;
    sc.monolingual_temperature = t_trans == 1.0 ? 10.0 / 7.0 : 1.0;
    StreamOptions so;
    so.batch_tokens = 256;
    so.seed = 5;
    MixedStream stream(corpus, sc, so);
    std::vector<double> rows_mmt(L), rows_cd(L);
    std::size_t cd_batches = 0;
    const std::size_t batches = 10000;
    for (std::uint64_t i = 0; i < batches; ++i) {
      const auto b = stream.batch_at(i);
      auto& counts = b.task == Task::translation ? rows_mmt : rows_cd;
      cd_batches += b.task == Task::denoising;
      for (const auto l : b.languages) counts[l] += 1.0;
    }
    if (t_trans == 1.0) denoise_fraction = static_cast<double>(cd_batches) / static_cast<double>(batches);
    const auto p_mmt = temperature_probabilities(sizes, sc.translation_temperature);
    const auto mono_sizes = corpus.denoise_sizes();
    const auto p_cd = temperature_probabilities(mono_sizes, sc.monolingual_temperature);
    for (const auto& [counts, p] : {std::pair{rows_mmt, p_mmt}, std::pair{rows_cd, p_cd}}) {
      double total = 0.0;
      for (double c : counts) total += c;
      for (std::size_t l = 0; l < L; ++l) worst_freq = std::max(worst_freq, std::abs(counts[l] / total - p[l]));
    }
  }
  const bool pass = worst_freq <= 0.02 && std::abs(denoise_fraction - 0.5) <= 0.02;
  return {pass, fmt::format("max language frequency error {:.4f}, denoising batch fraction {:.4f}", worst_freq,
                            denoise_fraction)};
}

// ---- 6 to 9 -------------------------------------------------------------

struct ToyRun {
  std::string preset;
  std::uint64_t seed = 0;
  fs::path dir;
  double train_seconds = 0.0;
  std::map<std::string, double> bleu;  // per language code
  double low_pcc = 0.0;
  bool low_pcc_defined = false;
  double prune_at_0 = 0.0;
  double prune_at_half = 0.0;
  double unpruned_mean_bleu = 0.0;
};

class ToyExperiment {
 public:
  ToyExperiment(fs::path work, std::uint64_t steps, std::size_t seeds) : work_(std::move(work)), steps_(steps) {
    for (std::uint64_t s = 1; s <= seeds; ++s) seeds_.push_back(s);
  }

  const fs::path& manifest() {
    if (manifest_.empty()) manifest_ = cmd_gen_corpus(SyntheticCorpusSpec{}, work_ / "toy_corpus");
    return manifest_;
  }

  ExperimentConfig config(const std::string& preset, std::uint64_t seed) {
    ExperimentConfig c;
    c.manifest = manifest();
    c.model.model_dim = 64;
    c.model.ffn_dim = 128;
    c.model.heads = 4;
    c.model.layers = 2;
    c.train.toggles = LossToggles::preset(preset);
    c.train.max_steps = steps_;
    c.train.eval_interval = 250;
    c.train.batch_tokens = 1024;
    c.train.seed = seed;
    return c;
  }

  // Trains (or reuses) one run; analysis artifacts are computed once.
  ToyRun& run(const std::string& preset, std::uint64_t seed, bool analyze) {
    const std::string key = fmt::format("{}_{}", preset, seed);
    auto it = runs_.find(key);
    if (it == runs_.end()) {
      ToyRun r;
      r.preset = preset;
      r.seed = seed;
      r.dir = work_ / "toy_runs" / key;
      fs::remove_all(r.dir);
      const auto t0 = Clock::now();
      run_training(config(preset, seed), r.dir);
      r.train_seconds = seconds_since(t0);
      std::cout << fmt::format("  trained {} in {:.0f} s\n", key, r.train_seconds) << std::flush;
      it = runs_.emplace(key, std::move(r)).first;
    }
    if (analyze && it->second.bleu.empty()) analyze_run(it->second);
    return it->second;
  }

  const std::vector<std::uint64_t>& seeds() const { return seeds_; }
  std::uint64_t steps() const { return steps_; }

  // The two languages with the fewest parallel sentences.
  std::vector<std::string> smallest_languages() {
    const auto m = Manifest::load(manifest());
    std::vector<std::pair<std::size_t, std::string>> by_size;
    for (const auto& l : m.languages) by_size.emplace_back(l.train_size, l.code);
    std::sort(by_size.begin(), by_size.end());
    return {by_size[0].second, by_size[1].second};
  }

 private:
  void analyze_run(ToyRun& r) {
    AnalyzeOptions bleu;
    bleu.kind = AnalysisKind::bleu;
    cmd_analyze(r.dir, bleu);
    for (const auto& row : csv_rows(r.dir / "analysis" / "bleu.csv")) {
      if (row[0].rfind("mean", 0) != 0) r.bleu[row[0]] = std::stod(row[2]);
    }

    AnalyzeOptions pcc;
    pcc.kind = AnalysisKind::pcc;
    pcc.group = PccGroup::low;
    cmd_analyze(r.dir, pcc);
    const auto rows = csv_rows(r.dir / "analysis" / "pcc_translation_low.csv");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < rows.size(); ++j) {
        if (i == j || rows[i][j + 1].empty()) continue;
        sum += std::stod(rows[i][j + 1]);
        ++count;
      }
    }
    r.low_pcc_defined = count > 0;
    r.low_pcc = count ? sum / static_cast<double>(count) : 0.0;

    AnalyzeOptions prune;
    prune.kind = AnalysisKind::prune;
    prune.ratios = std::vector<double>{0.0, 0.5};
    cmd_analyze(r.dir, prune);
    const auto curve = csv_rows(r.dir / "analysis" / "prune_translation.csv");
    r.prune_at_0 = std::stod(curve.at(0).at(2));
    r.prune_at_half = std::stod(curve.at(1).at(2));

    EvalOptions eval;
    eval.bleu = true;
    std::ostringstream sink;
    r.unpruned_mean_bleu = cmd_eval(r.dir, eval, sink).at("mean_bleu").get<double>();
  }

  fs::path work_;
  std::uint64_t steps_;
  std::vector<std::uint64_t> seeds_;
  fs::path manifest_;
  std::map<std::string, ToyRun> runs_;
};

Outcome toy_learning(ToyExperiment& toy) {
  auto& r = toy.run("regular", toy.seeds().front(), false);
  std::optional<std::uint64_t> reached;
  double best_acc = 0.0;
  for (const auto& row : csv_rows(r.dir / kEvalLog)) {
    const double acc = std::stod(row[2]);
    best_acc = std::max(best_acc, acc);
    if (!reached && acc > 0.9) reached = std::stoull(row[0]);
  }
  const bool pass = reached && *reached <= 5000 && r.train_seconds < 900.0;
  return {pass, fmt::format("dev token accuracy > 0.9 first at step {}, best {:.4f}, run took {:.0f} s",
                            reached ? std::to_string(*reached) : "never", best_acc, r.train_seconds)};
}

Outcome id_effect(ToyExperiment& toy) {
  const auto small = toy.smallest_languages();
  std::size_t wins = 0;
  std::string detail;
  for (const auto seed : toy.seeds()) {
    const auto& reg = toy.run("regular", seed, true);
    const auto& id = toy.run("id", seed, true);
    const double b_reg = (reg.bleu.at(small[0]) + reg.bleu.at(small[1])) / 2.0;
    const double b_id = (id.bleu.at(small[0]) + id.bleu.at(small[1])) / 2.0;
    wins += b_id >= b_reg;
    detail += fmt::format("{}seed {}: id {:.2f} vs regular {:.2f}", detail.empty() ? "" : "; ", seed, b_id, b_reg);
  }
  return {wins >= 2, fmt::format("{}/{} seeds; {} ({} and {} mean dev BLEU)", wins, toy.seeds().size(), detail,
                                 small[0], small[1])};
}

Outcome specificity_effect(ToyExperiment& toy) {
  std::size_t wins = 0;
  std::string detail;
  for (const auto seed : toy.seeds()) {
    const auto& reg = toy.run("regular", seed, true);
    const auto& id = toy.run("id", seed, true);
    wins += id.low_pcc_defined && reg.low_pcc_defined && id.low_pcc < reg.low_pcc;
    detail += fmt::format("{}seed {}: id {:.4f} vs regular {:.4f}", detail.empty() ? "" : "; ", seed, id.low_pcc,
                          reg.low_pcc);
  }
  return {wins >= 2, fmt::format("{}/{} seeds; {} (mean off-diagonal low-group PCC)", wins, toy.seeds().size(),
                                 detail)};
}

Outcome pruning_effect(ToyExperiment& toy) {
  std::size_t wins = 0;
  bool exact = true;
  std::string detail;
  for (const auto seed : toy.seeds()) {
    const auto& reg = toy.run("regular", seed, true);
    const auto& id = toy.run("id", seed, true);
    exact = exact && reg.prune_at_0 == reg.unpruned_mean_bleu && id.prune_at_0 == id.unpruned_mean_bleu;
    const double keep_reg = reg.prune_at_0 > 0 ? reg.prune_at_half / reg.prune_at_0 : 0.0;
    const double keep_id = id.prune_at_0 > 0 ? id.prune_at_half / id.prune_at_0 : 0.0;
    wins += keep_id > keep_reg;
    detail += fmt::format("{}seed {}: id {:.3f} vs regular {:.3f}", detail.empty() ? "" : "; ", seed, keep_id,
                          keep_reg);
  }
  return {wins >= 2 && exact, fmt::format("{}/{} seeds; {} (BLEU retained at ratio 0.5); ratio 0 equals unpruned: {}",
                                          wins, toy.seeds().size(), detail, exact ? "yes" : "no")};
}

// ---- 10 -----------------------------------------------------------------

ExperimentConfig small_run_config(const fs::path& manifest, const std::string& preset) {
  ExperimentConfig c;
  c.manifest = manifest;
  c.model = small_model(0, 32);
  c.train.toggles = LossToggles::preset(preset);
  c.train.max_steps = 40;
  c.train.eval_interval = 20;
  c.train.batch_tokens = 256;
  return c;
}

Outcome ablation_scaffolding(const fs::path& work) {
  const auto manifest = cmd_gen_corpus(small_spec(), work / "c10" / "corpus");
  const std::vector<std::string> presets = {"regular", "id", "dae", "row4", "row5", "cd", "row7", "cd_id"};
  std::size_t ok = 0;
  std::string bad;
  for (const auto& p : presets) {
    const auto toggles = LossToggles::preset(p);
    const std::array<bool, 6> enabled = {toggles.mmt, toggles.e, toggles.d, toggles.id_mmt, toggles.id_e, toggles.id_d};
    const auto dir = work / "c10" / p;
    fs::remove_all(dir);
    bool good = true;
    try {
      const auto r = run_training(small_run_config(manifest, p), dir);
      good = r.state.step == 40;
      const auto lines = read_lines(dir / kTrainLog);
      good = good && lines.size() == 41 && lines.front() == kTrainLogHeader;
      std::array<bool, 6> seen_positive{};
      for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto f = split(lines[i]);
        if (f.size() != 10) {
          good = false;
          break;
        }
        for (std::size_t t = 0; t < 6; ++t) {
          const auto& cell = f[2 + t];
          if (cell.empty() == enabled[t]) good = false;
          if (!cell.empty() && std::stod(cell) > 0.0) seen_positive[t] = true;
        }
      }
      for (std::size_t t = 0; t < 6; ++t) good = good && seen_positive[t] == enabled[t];
    } catch (const std::exception& e) {
      good = false;
      bad += fmt::format(" {} ({})", p, e.what());
    }
    if (good) {
      ++ok;
    } else if (bad.find(p) == std::string::npos) {
      bad += " " + p;
    }
  }
  return {ok == presets.size(), fmt::format("{}/{} presets completed with exactly their enabled columns{}", ok,
                                            presets.size(), bad.empty() ? "" : "; failed:" + bad)};
}

// ---- 11 -----------------------------------------------------------------

Outcome shared_projection(const fs::path& work) {
  const auto manifest = cmd_gen_corpus(small_spec(), work / "c11" / "corpus");
  std::map<bool, std::pair<std::size_t, std::size_t>> counts;  // elements, tensors
  std::map<bool, bool> finished;
  std::size_t V = 0, d = 0;
  for (const bool share : {true, false}) {
    auto c = small_run_config(manifest, "cd_id");
    c.model.share_projection = share;
    c.train.max_steps = 60;
    const auto dir = work / "c11" / (share ? "shared" : "separate");
    fs::remove_all(dir);
    const auto r = run_training(c, dir);
    finished[share] = r.state.step == 60 && fs::exists(dir / kLastCheckpoint);
    const auto run = load_run(dir, "last");
    const auto model = load_model<float>(run);
    counts[share] = {model.parameter_count(), model.parameters().entry_count()};
    V = model.config().vocab_size;
    d = model.config().model_dim;
  }
  const bool pass = finished[true] && finished[false] && counts[true].first < counts[false].first &&
                    counts[true].first == counts[false].first - V * d &&
                    counts[true].second + 1 == counts[false].second;
  return {pass, fmt::format("shared {} parameters, separate {} (difference {} = V*d = {}*{})", counts[true].first,
                            counts[false].first, counts[false].first - counts[true].first, V, d)};
}

// ---- 12 -----------------------------------------------------------------

Outcome determinism(const fs::path& work) {
  const auto manifest = cmd_gen_corpus(small_spec(), work / "c12" / "corpus");
  std::vector<std::string> logs, evals;
  for (const char* name : {"a", "b"}) {
    auto c = small_run_config(manifest, "cd_id");
    c.precision = 64;
    c.train.max_steps = 60;
    const auto dir = work / "c12" / name;
    fs::remove_all(dir);
    run_training(c, dir);
    logs.push_back(slurp(dir / kTrainLog));
    evals.push_back(slurp(dir / kEvalLog));
  }
  const bool pass = !logs[0].empty() && logs[0] == logs[1] && evals[0] == evals[1];
  return {pass, fmt::format("training logs {} ({} bytes), eval logs {}", logs[0] == logs[1] ? "identical" : "differ",
                            logs[0].size(), evals[0] == evals[1] ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  fs::path work = fs::current_path() / "acceptance_work";
  std::vector<int> only;
  std::uint64_t steps = 5000;
  std::size_t seeds = 3;
  app.add_option("--work", work, "Scratch directory");
  app.add_option("--only", only, "Criteria to run")->delimiter(',');
  app.add_option("--steps", steps, "Training steps for the toy runs");
  app.add_option("--seeds", seeds, "Seeds for the directional criteria");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  ToyExperiment toy(work, steps, seeds);
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, [&] { return gradient_check(work); }},
      {2, [] { return loss_identities(); }},
      {3, [&] { return layout_alignment(work); }},
      {4, [&] { return masking_statistics(work); }},
      {5, [&] { return sampling_and_mixing(work); }},
      {6, [&] { return toy_learning(toy); }},
      {7, [&] { return id_effect(toy); }},
      {8, [&] { return specificity_effect(toy); }},
      {9, [&] { return pruning_effect(toy); }},
      {10, [&] { return ablation_scaffolding(work); }},
      {11, [&] { return shared_projection(work); }},
      {12, [&] { return determinism(work); }},
  };
  const std::set<int> selected(only.begin(), only.end());
  std::size_t failed = 0;
  for (const auto& [id, check] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << fmt::format("criterion {:2}: {}  {}\n", id, o.pass ? "PASS" : "FAIL", o.detail) << std::flush;
  }
  return failed == 0 ? 0 : 1;
}
