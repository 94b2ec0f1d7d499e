// SPDX-License-Identifier: Apache-2.0
#include "mmtlab/commands.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "mmtlab/beam_search.hpp"
#include "mmtlab/error.hpp"
#include "mmtlab/experiment.hpp"
#include "mmtlab/report_io.hpp"

namespace mmtlab {

RunLock::RunLock(const std::filesystem::path& dir) : path_(dir / kLockFile) {
  std::filesystem::create_directories(dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) {
      throw IoError(fmt::format("{} is locked by another mmtlab process (remove {} if that process is gone)",
                                dir.string(), path_.string()));
    }
    throw IoError(fmt::format("cannot create lock {}: {}", path_.string(), std::strerror(errno)));
  }
  const auto pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

void set_config_field(nlohmann::json& doc, const std::string& path, const std::string& value) {
  if (path.empty()) throw UsageError("empty config field name");
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const auto key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw UsageError("malformed config field '" + path + "'");
    if (!node->is_object()) throw UsageError("config field '" + path + "' descends into a non-object");
    if (dot == std::string::npos) {
      auto parsed = nlohmann::json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? nlohmann::json(value) : std::move(parsed);
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

std::map<std::string, std::string> environment_overrides() {
  std::map<std::string, std::string> env;
  for (const char* name : {kEnvOutputDir, kEnvThreads}) {
    if (const char* v = std::getenv(name); v != nullptr && *v != '\0') env[name] = v;
  }
  return env;
}

ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& file,
                                const std::vector<std::pair<std::string, std::string>>& sets,
                                const std::map<std::string, std::string>& env) {
  nlohmann::json doc = ExperimentConfig{}.to_json();
  if (file) {
    std::ifstream is(*file);
    if (!is) throw UsageError("cannot read config " + file->string());
    doc = nlohmann::json::parse(is, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw UsageError("config " + file->string() + " is not a JSON object");
    // A relative manifest path in a config file is relative to that file.
    if (doc.contains("manifest") && doc["manifest"].is_string()) {
      const std::filesystem::path m = doc["manifest"].get<std::string>();
      if (m.is_relative()) doc["manifest"] = (file->parent_path() / m).lexically_normal().generic_string();
    }
  }
  if (auto it = env.find(kEnvOutputDir); it != env.end()) doc["output_dir"] = it->second;
  if (auto it = env.find(kEnvThreads); it != env.end()) {
    std::size_t pos = 0;
    unsigned long n = 0;
    try {
      n = std::stoul(it->second, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != it->second.size() || n == 0) {
      throw UsageError(fmt::format("{} must be a positive integer, got '{}'", kEnvThreads, it->second));
    }
    doc["threads"] = n;
  }
  for (const auto& [k, v] : sets) set_config_field(doc, k, v);
  try {
    auto cfg = ExperimentConfig::from_json(doc);
    cfg.validate();
    return cfg;
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(fmt::format("config: {}", e.what()));
  }
}

std::filesystem::path cmd_gen_corpus(const SyntheticCorpusSpec& spec, const std::filesystem::path& out_dir) {
  try {
    spec.validate();
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  return write_synthetic_corpus(spec, out_dir);
}

TrainResult cmd_train(const ExperimentConfig& config, bool resume) {
  RunLock lock(config.output_dir);
  return run_training(config, config.output_dir, resume);
}

std::string analysis_kind_name(AnalysisKind k) {
  switch (k) {
    case AnalysisKind::sensitivity: return "sensitivity";
    case AnalysisKind::specificity: return "specificity";
    case AnalysisKind::pcc: return "pcc";
    case AnalysisKind::prune: return "prune";
    case AnalysisKind::stats: return "stats";
    case AnalysisKind::bleu: return "bleu";
  }
  return "sensitivity";
}

AnalysisKind parse_analysis_kind(const std::string& s) {
  for (auto k : {AnalysisKind::sensitivity, AnalysisKind::specificity, AnalysisKind::pcc, AnalysisKind::prune,
                 AnalysisKind::stats, AnalysisKind::bleu}) {
    if (analysis_kind_name(k) == s) return k;
  }
  throw UsageError("unknown analysis '" + s + "' (sensitivity|specificity|pcc|prune|stats|bleu)");
}

namespace {

double mean_bleu(const std::vector<LanguageBleu>& scores) {
  if (scores.empty()) return 0.0;
  double s = 0.0;
  for (const auto& b : scores) s += b.bleu;
  return s / static_cast<double>(scores.size());
}

template <class T>
std::vector<std::filesystem::path> analyze_with(const LoadedRun& run, const AnalyzeOptions& opt,
                                                const std::filesystem::path& out_dir) {
  const auto model = load_model<T>(run);
  const auto& cfg = run.config;
  const auto& ac = cfg.analysis;
  const auto& corpus = run.corpus;
  const std::string& sha = run.checkpoint_sha256;
  const std::size_t batches = opt.batches.value_or(ac.batches);
  const std::size_t threads = opt.threads.value_or(cfg.threads);
  const std::size_t max_sentences = opt.max_sentences.value_or(ac.bleu_max_sentences);
  if (batches == 0) throw UsageError("--batches must be positive");

  StreamOptions so = cfg.stream_options();
  so.batch_tokens = ac.batch_tokens;
  so.seed = ac.seed;
  so.max_positions = model.config().max_positions;
  const SamplingConfig& sampling = cfg.sampling;
  const std::string task = analysis_task_name(opt.task);

  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& name, const std::string& content) {
    const auto path = out_dir / name;
    write_file(path, content);
    written.push_back(path);
  };

  switch (opt.kind) {
    case AnalysisKind::sensitivity: {
      const auto report = sensitivity_report(model, corpus, opt.task, batches, so, sampling, false, true);
      for (std::size_t l = 0; l < report.languages.size(); ++l) {
        emit(fmt::format("sensitivity_{}_{}.csv", task, report.languages[l]),
             vector_csv<T>(report.per_language[l], model.parameters(), sha));
      }
      emit(fmt::format("sensitivity_{}_pooled.csv", task), vector_csv<T>(report.pooled, model.parameters(), sha));
      break;
    }
    case AnalysisKind::specificity: {
      const auto report = sensitivity_report(model, corpus, opt.task, batches, so, sampling, true, false);
      const auto scores = specificity_scores(report);
      for (std::size_t l = 0; l < scores.languages.size(); ++l) {
        emit(fmt::format("specificity_{}_{}.csv", task, scores.languages[l]),
             vector_csv<T>(scores.per_language[l], model.parameters(), sha));
      }
      break;
    }
    case AnalysisKind::pcc: {
      const std::string group = pcc_group_name(opt.group);
      if (opt.cross_task) {
        const auto mmt =
            sensitivity_report(model, corpus, AnalysisTask::translation, batches, so, sampling, false, true);
        const auto cd = sensitivity_report(model, corpus, AnalysisTask::denoising, batches, so, sampling, false, true);
        const auto m = cross_task_matrix(mmt, cd, opt.group, ac.group_fraction);
        emit(fmt::format("pcc_cross_task_{}.csv", group), matrix_csv(m, sha));
        emit(fmt::format("pcc_cross_task_{}.svg", group),
             heatmap_svg(m, fmt::format("Translation vs denoising sensitivity PCC ({})", group), sha));
      } else {
        const auto report = sensitivity_report(model, corpus, opt.task, batches, so, sampling, false, true);
        const auto m = pcc_matrix(report, opt.group, ac.group_fraction);
        emit(fmt::format("pcc_{}_{}.csv", task, group), matrix_csv(m, sha));
        emit(fmt::format("pcc_{}_{}.svg", task, group),
             heatmap_svg(m, fmt::format("Sensitivity PCC, {} task ({})", task, group), sha));
      }
      break;
    }
    case AnalysisKind::prune: {
      std::vector<double> ratios = opt.ratios.value_or(ac.ratios);
      if (ratios.empty()) throw UsageError("--ratios is empty");
      for (std::size_t i = 0; i < ratios.size(); ++i) {
        if (!(ratios[i] >= 0.0 && ratios[i] <= 1.0)) throw UsageError("prune ratios must lie in [0, 1]");
        if (i > 0 && !(ratios[i] > ratios[i - 1])) throw UsageError("prune ratios must be strictly increasing");
      }
      const auto aggregate = opt.aggregate.value_or(ac.aggregate);
      const auto report = sensitivity_report(model, corpus, opt.task, batches, so, sampling, true, true);
      const auto scores = specificity_scores(report);
      const auto order = prune_order(scores, report.group_ranking(), ac.protect_fraction, aggregate);
      try {
        for (const double r : ratios) (void)prune_count(order, r);
      } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
      }

      std::function<double(const Transformer<T>&)> evaluate;
      if (opt.metric == "bleu") {
        evaluate = [&](const Transformer<T>& m) {
          return mean_bleu(evaluate_bleu(m, corpus, cfg.tag_policy, ac.beam, cfg.train.length_penalty, max_sentences,
                                         threads));
        };
      } else if (opt.metric == "dev_loss" || opt.metric == "dev_accuracy") {
        StreamOptions dev_opts = so;
        dev_opts.batch_tokens = cfg.train.batch_tokens;
        auto dev = std::make_shared<std::vector<Batch>>(all_dev_batches(corpus, dev_opts));
        const bool loss = opt.metric == "dev_loss";
        evaluate = [dev, loss](const Transformer<T>& m) {
          const auto d = evaluate_batches(m, std::span<const Batch>(*dev));
          return loss ? d.loss : d.token_accuracy;
        };
      } else {
        throw UsageError("unknown prune metric '" + opt.metric + "' (bleu|dev_loss|dev_accuracy)");
      }

      auto curve = prune_sweep(model, order, ratios, evaluate);
      curve.ordering = fmt::format(
          "specificity_{} task={} protect_fraction={} ratio_basis=all_parameters parameters={} protected={} metric={}",
          aggregate_name(aggregate), task, ac.protect_fraction, order.parameter_count, order.protected_count,
          opt.metric);
      emit(fmt::format("prune_{}.csv", task), curve_csv(curve, sha));
      Series s{fmt::format("specificity ({})", aggregate_name(aggregate)), {}};
      for (const auto& p : curve.points) s.points.emplace_back(p.ratio, p.metric);
      emit(fmt::format("prune_{}.svg", task),
           line_chart_svg({s}, fmt::format("One-shot pruning, {} task", task), "pruning ratio", opt.metric, sha));
      break;
    }
    case AnalysisKind::stats: {
      const auto pooled_batches = mixed_batches(corpus, opt.task, std::nullopt, batches, so, sampling);
      const auto pooled = sensitivity(model, std::span<const Batch>(pooled_batches), opt.task);
      const auto stats = sensitivity_stats(pooled);
      emit(fmt::format("stats_{}.csv", task), stats_csv(stats, sha));
      emit(fmt::format("stats_{}_full.svg", task),
           histogram_svg(stats.full, fmt::format("Pooled sensitivity, {} task", task), sha));
      emit(fmt::format("stats_{}_trimmed.svg", task),
           histogram_svg(stats.trimmed, fmt::format("Pooled sensitivity without the top 1%, {} task", task), sha));
      break;
    }
    case AnalysisKind::bleu: {
      const auto scores =
          evaluate_bleu(model, corpus, cfg.tag_policy, ac.beam, cfg.train.length_penalty, max_sentences, threads);
      emit("bleu.csv", bleu_csv(scores, sha));
      break;
    }
  }
  return written;
}

template <class T>
nlohmann::json eval_with(const LoadedRun& run, const EvalOptions& opt, std::ostream& out) {
  const auto model = load_model<T>(run);
  const auto& cfg = run.config;
  const auto& corpus = run.corpus;
  const std::size_t threads = opt.threads.value_or(cfg.threads);

  StreamOptions so = cfg.stream_options();
  so.max_positions = model.config().max_positions;
  const auto dev = all_dev_batches(corpus, so);
  const auto m = evaluate_batches(model, std::span<const Batch>(dev));
  nlohmann::json result = {{"checkpoint", run.checkpoint_path.generic_string()},
                           {"checkpoint_sha256", run.checkpoint_sha256},
                           {"step", run.checkpoint.meta.at("state").value("step", 0)},
                           {"dev_loss", m.loss},
                           {"dev_token_accuracy", m.token_accuracy},
                           {"dev_tokens", m.tokens}};
  if (opt.bleu) {
    const auto scores = evaluate_bleu(model, corpus, cfg.tag_policy, cfg.analysis.beam, cfg.train.length_penalty,
                                      opt.max_sentences.value_or(cfg.analysis.bleu_max_sentences), threads);
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : scores) {
      arr.push_back({{"language", s.code}, {"category", s.category}, {"bleu", s.bleu}, {"sentences", s.sentences}});
    }
    result["bleu"] = arr;
    result["mean_bleu"] = mean_bleu(scores);
  }
  if (opt.input) {
    if (opt.language.empty()) throw UsageError("--input requires --lang");
    LanguageId l = corpus.languages.size();
    for (LanguageId i = 0; i < corpus.languages.size(); ++i) {
      if (corpus.languages[i].code == opt.language) l = i;
    }
    if (l >= corpus.languages.size()) throw UsageError("--lang must name a non-pivot language of the run");
    const auto lines = read_lines(*opt.input);
    std::ofstream file;
    if (opt.output) {
      file.open(*opt.output, std::ios::binary | std::ios::trunc);
      if (!file) throw IoError("cannot write " + opt.output->string());
    }
    std::ostream& sink = opt.output ? static_cast<std::ostream&>(file) : out;
    for (const auto& line : lines) {
      const auto src = corpus.vocab.encode(line);
      if (src.empty()) {
        sink << '\n';
        continue;
      }
      const auto row = layout_mmt(src, {}, corpus.source_language(l), corpus.target_language(l), corpus.vocab,
                                  model.config().max_positions, cfg.tag_policy);
      const auto r = translate(model, corpus.vocab, row.encoder_input, row.decoder_input.front(), cfg.analysis.beam,
                               cfg.train.length_penalty);
      sink << corpus.vocab.detokenize(r.tokens) << '\n';
    }
    result["translated"] = lines.size();
  }
  return result;
}

}  // namespace

std::vector<std::filesystem::path> cmd_analyze(const std::filesystem::path& run_dir, const AnalyzeOptions& options) {
  RunLock lock(run_dir);
  const auto run = load_run(run_dir, options.checkpoint);
  const auto out_dir = options.out_dir.value_or(run_dir / "analysis");
  return run.precision() == 64 ? analyze_with<double>(run, options, out_dir)
                               : analyze_with<float>(run, options, out_dir);
}

nlohmann::json cmd_eval(const std::filesystem::path& run_dir, const EvalOptions& options, std::ostream& out) {
  RunLock lock(run_dir);
  const auto run = load_run(run_dir, options.checkpoint);
  return run.precision() == 64 ? eval_with<double>(run, options, out) : eval_with<float>(run, options, out);
}

namespace {

std::optional<std::size_t> env_threads(const std::map<std::string, std::string>& env) {
  const auto it = env.find(kEnvThreads);
  if (it == env.end()) return std::nullopt;
  std::size_t pos = 0;
  unsigned long n = 0;
  try {
    n = std::stoul(it->second, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != it->second.size() || n == 0) {
    throw UsageError(fmt::format("{} must be a positive integer, got '{}'", kEnvThreads, it->second));
  }
  return n;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"mmtlab: multilingual translation training and parameter-sensitivity analysis"};
  app.require_subcommand(1);

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "Write a synthetic cipher-task corpus and its manifest");
  SyntheticCorpusSpec spec;
  std::filesystem::path gen_out;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--sizes", spec.train_sizes, "Parallel sentences per language")->delimiter(',');
  gen->add_option("--mono-sizes", spec.mono_sizes, "Monolingual sentences per language")->delimiter(',');
  gen->add_option("--categories", spec.categories, "Resource category per language")->delimiter(',');
  gen->add_option("--dev-size", spec.dev_size, "Dev sentences per language");
  gen->add_option("--latent-vocab", spec.latent_vocab, "Latent word types");
  gen->add_option("--min-length", spec.min_length);
  gen->add_option("--max-length", spec.max_length);
  gen->add_option("--token-noise", spec.token_noise, "Per-word substitution probability");
  gen->add_option("--seed", spec.seed);
  gen->add_option("--pivot", spec.pivot, "Pivot language code");

  // train
  auto* train = app.add_subcommand("train", "Train one run");
  std::optional<std::filesystem::path> train_config;
  std::vector<std::pair<std::string, std::string>> flag_sets;
  std::vector<std::string> raw_sets;
  bool resume = false;
  train->add_option("--config", train_config, "Experiment config (JSON)");
  auto flag = [&](const char* name, const char* field, const char* help) {
    train->add_option_function<std::string>(
        name, [&flag_sets, field](const std::string& v) { flag_sets.emplace_back(field, v); }, help);
  };
  flag("--run-dir", "output_dir", "Run directory");
  flag("--manifest", "manifest", "Corpus manifest");
  flag("--preset", "train.toggles", "Loss preset (regular|id|dae|row4|row5|cd|row7|cd_id)");
  flag("--precision", "precision", "32 or 64");
  flag("--seed", "train.seed", "Training seed");
  flag("--max-steps", "train.max_steps", "Optimizer steps");
  flag("--eval-interval", "train.eval_interval", "Steps between dev evaluations");
  flag("--batch-tokens", "train.batch_tokens", "Padded tokens per batch");
  flag("--passes", "train.K", "Forward passes per batch when an ID term is on");
  flag("--alpha", "train.alpha", "Weight of the ID terms");
  flag("--peak-lr", "train.adam.peak_lr", "Peak learning rate");
  flag("--warmup", "train.warmup_steps", "Warmup steps");
  flag("--patience", "train.patience", "Evaluations without improvement before stopping");
  flag("--threads", "threads", "Worker threads for decoding");
  train->add_option("--set", raw_sets, "Override any config field: key.path=value");
  train->add_flag("--resume", resume, "Continue from the last checkpoint in the run directory");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Analyze a trained run");
  std::filesystem::path analyze_run;
  std::string kind_name;
  AnalyzeOptions aopt;
  std::string task_name_opt = "translation";
  std::string group_name = "all";
  std::optional<std::string> aggregate_opt;
  analyze->add_option("run_dir", analyze_run, "Run directory")->required();
  analyze->add_option("analysis", kind_name, "sensitivity|specificity|pcc|prune|stats|bleu")->required();
  analyze->add_option("--checkpoint", aopt.checkpoint, "best, last, or a checkpoint path");
  analyze->add_option("--task", task_name_opt, "translation|denoising");
  analyze->add_option("--group", group_name, "PCC parameter group: all|high|low");
  analyze->add_flag("--cross-task", aopt.cross_task, "Correlate translation with denoising sensitivity");
  analyze->add_option("--ratios", aopt.ratios, "Pruning ratios, comma separated")->delimiter(',');
  analyze->add_option("--batches", aopt.batches, "Batches per sensitivity estimate");
  analyze->add_option("--aggregate", aggregate_opt, "Specificity aggregate for pruning: max|mean");
  analyze->add_option("--metric", aopt.metric, "Prune metric: bleu|dev_loss|dev_accuracy");
  analyze->add_option("--max-sentences", aopt.max_sentences, "Dev sentences per language for BLEU (0: all)");
  analyze->add_option("--threads", aopt.threads, "Decoding threads");
  analyze->add_option("--out", aopt.out_dir, "Artifact directory (default <run>/analysis)");

  // eval
  auto* eval = app.add_subcommand("eval", "Dev metrics and translation with a trained run");
  std::filesystem::path eval_run;
  EvalOptions eopt;
  eval->add_option("run_dir", eval_run, "Run directory")->required();
  eval->add_option("--checkpoint", eopt.checkpoint, "best, last, or a checkpoint path");
  eval->add_flag("--bleu", eopt.bleu, "Also report beam-search BLEU per language");
  eval->add_option("--max-sentences", eopt.max_sentences, "Dev sentences per language for BLEU (0: all)");
  eval->add_option("--threads", eopt.threads, "Decoding threads");
  eval->add_option("--input", eopt.input, "Source sentences to translate, one per line");
  eval->add_option("--lang", eopt.language, "Non-pivot language of the translation direction");
  eval->add_option("--output", eopt.output, "Translation output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    const auto env = environment_overrides();
    if (gen->parsed()) {
      const auto manifest = cmd_gen_corpus(spec, gen_out);
      out << manifest.string() << '\n';
    } else if (train->parsed()) {
      for (const auto& s : raw_sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
        flag_sets.emplace_back(s.substr(0, eq), s.substr(eq + 1));
      }
      const auto config = resolve_config(train_config, flag_sets, env);
      const auto result = cmd_train(config, resume);
      out << fmt::format("step {} best_dev_loss {} best_step {}{}\n", result.state.step, result.state.best_dev_loss,
                         result.state.best_step, result.state.stopped_early ? " (stopped early)" : "");
    } else if (analyze->parsed()) {
      aopt.kind = parse_analysis_kind(kind_name);
      aopt.task = parse_analysis_task(task_name_opt);
      aopt.group = parse_pcc_group(group_name);
      if (aggregate_opt) aopt.aggregate = parse_aggregate(*aggregate_opt);
      if (!aopt.threads) aopt.threads = env_threads(env);
      for (const auto& p : cmd_analyze(analyze_run, aopt)) out << p.string() << '\n';
    } else if (eval->parsed()) {
      if (!eopt.threads) eopt.threads = env_threads(env);
      const bool to_stdout = eopt.input && !eopt.output;
      const auto result = cmd_eval(eval_run, eopt, out);
      (to_stdout ? err : out) << result.dump(2) << '\n';
    }
    return 0;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace mmtlab
