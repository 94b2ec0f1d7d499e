// SPDX-License-Identifier: Apache-2.0
//
// Subcommands behind the mmtlab executable. Each returns normally on success
// and throws UsageError (exit 1) or any other exception (exit 2).
#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmtlab/analysis.hpp"
#include "mmtlab/config.hpp"
#include "mmtlab/synthetic.hpp"
#include "mmtlab/trainer.hpp"

namespace mmtlab {

inline constexpr const char* kEnvOutputDir = "MMTLAB_OUTPUT_DIR";
inline constexpr const char* kEnvThreads = "MMTLAB_THREADS";
inline constexpr const char* kLockFile = ".lock";

/// Exclusive lock on a run directory, held for the lifetime of the object.
/// A second holder fails immediately instead of waiting.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// Sets `path` (dot-separated, e.g. "train.max_steps") in a config document.
/// The value is parsed as JSON when possible, otherwise taken as a string.
void set_config_field(nlohmann::json& doc, const std::string& path, const std::string& value);

/// Config resolution: file (or defaults), then environment, then `sets`
/// applied in order.
ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& file,
                                const std::vector<std::pair<std::string, std::string>>& sets,
                                const std::map<std::string, std::string>& env);

/// Reads MMTLAB_OUTPUT_DIR and MMTLAB_THREADS from the process environment.
std::map<std::string, std::string> environment_overrides();

std::filesystem::path cmd_gen_corpus(const SyntheticCorpusSpec& spec, const std::filesystem::path& out_dir);

TrainResult cmd_train(const ExperimentConfig& config, bool resume);

enum class AnalysisKind { sensitivity, specificity, pcc, prune, stats, bleu };
std::string analysis_kind_name(AnalysisKind k);
AnalysisKind parse_analysis_kind(const std::string& s);

struct AnalyzeOptions {
  AnalysisKind kind = AnalysisKind::sensitivity;
  std::string checkpoint = "best";  // best | last | path
  AnalysisTask task = AnalysisTask::translation;
  PccGroup group = PccGroup::all;
  bool cross_task = false;
  std::optional<std::vector<double>> ratios;
  std::optional<std::size_t> batches;
  std::optional<SpecificityAggregate> aggregate;
  std::optional<std::size_t> max_sentences;
  std::optional<std::size_t> threads;
  std::string metric = "bleu";  // prune metric: bleu | dev_loss | dev_accuracy
  std::optional<std::filesystem::path> out_dir;  // default <run>/analysis
};

/// Writes the artifacts of one analysis and returns their paths.
std::vector<std::filesystem::path> cmd_analyze(const std::filesystem::path& run_dir, const AnalyzeOptions& options);

struct EvalOptions {
  std::string checkpoint = "best";
  bool bleu = false;
  std::optional<std::size_t> max_sentences;
  std::optional<std::size_t> threads;
  // Translate a file of source sentences written in `language`.
  std::optional<std::filesystem::path> input;
  std::string language;
  std::optional<std::filesystem::path> output;  // default: stdout
};

/// Dev metrics as JSON; translations go to `options.output` or `out`.
nlohmann::json cmd_eval(const std::filesystem::path& run_dir, const EvalOptions& options, std::ostream& out);

/// Parses argv and dispatches. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mmtlab
