// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmtlab/batch.hpp"
#include "mmtlab/corpus.hpp"
#include "mmtlab/model.hpp"
#include "mmtlab/sampling.hpp"

namespace mmtlab {

inline constexpr double kSpecificitySigma = 1e-8;

/// Loss differentiated for sensitivity: the translation loss, or the
/// concurrent-denoising loss (encoder head + decoder head).
enum class AnalysisTask { translation, denoising };

std::string analysis_task_name(AnalysisTask task);
AnalysisTask parse_analysis_task(const std::string& name);

/// S_i = |theta_i * g_i| for one gradient.
std::vector<double> first_order_sensitivity(std::span<const double> theta, std::span<const double> grad);

/// Mean over batches of |theta * grad| with dropout off. The model is not
/// modified: gradients go into a private copy of the parameters.
template <class T>
std::vector<double> sensitivity(const Transformer<T>& model, std::span<const Batch> batches, AnalysisTask task);

/// Batches whose rows all come from `language`.
std::vector<Batch> language_batches(const TrainingCorpus& corpus, AnalysisTask task, LanguageId language,
                                    std::size_t count, const StreamOptions& options, const SamplingConfig& sampling);

/// B_{-l}: each row's language is drawn from the task's temperature
/// distribution restricted to the languages other than `excluded`.
/// Without an excluded language the rows cover all languages (pooled B).
std::vector<Batch> mixed_batches(const TrainingCorpus& corpus, AnalysisTask task, std::optional<LanguageId> excluded,
                                 std::size_t count, const StreamOptions& options, const SamplingConfig& sampling);

struct SensitivityReport {
  AnalysisTask task = AnalysisTask::translation;
  std::size_t batches = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> languages;
  std::vector<std::vector<double>> per_language;  // S(theta, B_l)
  std::vector<std::vector<double>> complement;    // S(theta, B_{-l}); may be empty
  std::vector<double> pooled;                     // S(theta, B); may be empty

  std::size_t parameter_count() const { return per_language.empty() ? 0 : per_language.front().size(); }
  /// Mean over languages of the per-language vectors.
  std::vector<double> mean_over_languages() const;
  /// Ranking used for high/low groups and prune protection: the pooled vector,
  /// or the mean over languages when pooled was not computed.
  std::vector<double> group_ranking() const;
};

template <class T>
SensitivityReport sensitivity_report(const Transformer<T>& model, const TrainingCorpus& corpus, AnalysisTask task,
                                     std::size_t batches, const StreamOptions& options, const SamplingConfig& sampling,
                                     bool with_complement = true, bool with_pooled = true);

/// D = (S_l - S_{-l}) / (S_{-l} + sigma)
std::vector<double> specificity(std::span<const double> s_lang, std::span<const double> s_rest,
                                double sigma = kSpecificitySigma);

struct SpecificityScores {
  std::vector<std::string> languages;
  std::vector<std::vector<double>> per_language;  // D(., l) for each l
  double sigma = kSpecificitySigma;
};

/// Requires complement vectors in the report.
SpecificityScores specificity_scores(const SensitivityReport& report, double sigma = kSpecificitySigma);

/// Pearson correlation; missing when either input is constant.
std::optional<double> pearson(std::span<const double> a, std::span<const double> b);

enum class PccGroup { all, high, low };
std::string pcc_group_name(PccGroup g);
PccGroup parse_pcc_group(const std::string& name);

/// Flat indices of the top ceil(fraction * N) entries (ties: lower index
/// first) for `high`, the remainder for `low`, everything for `all`.
std::vector<std::size_t> group_indices(std::span<const double> ranking, PccGroup group, double fraction = 0.10);

struct CorrelationMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<std::optional<double>>> values;
  PccGroup group = PccGroup::all;
  bool cross_task = false;

  /// Mean of the defined off-diagonal entries.
  std::optional<double> mean_off_diagonal() const;
};

/// Group membership ranks the mean-over-languages sensitivity.
CorrelationMatrix pcc_matrix(const SensitivityReport& report, PccGroup group, double fraction = 0.10);

/// PCC between one language's translation and denoising sensitivities.
std::optional<double> cross_task_pcc(const SensitivityReport& mmt, const SensitivityReport& cd, std::size_t language);

/// Entry (i, j) correlates language i's translation sensitivity with
/// language j's denoising sensitivity, so the diagonal holds the per-language
/// cross-task coefficients. Group membership ranks the mean of both tasks'
/// mean-over-languages sensitivity. The matrix is not symmetric.
CorrelationMatrix cross_task_matrix(const SensitivityReport& mmt, const SensitivityReport& cd, PccGroup group,
                                    double fraction = 0.10);

enum class SpecificityAggregate { max, mean };
std::string aggregate_name(SpecificityAggregate a);
SpecificityAggregate parse_aggregate(const std::string& name);

struct PruneOrder {
  std::vector<std::size_t> order;  // unprotected flat indices, least specific first
  std::size_t parameter_count = 0;
  std::size_t protected_count = 0;
  SpecificityAggregate aggregate = SpecificityAggregate::max;
};

/// Protects the ceil(protect_fraction * N) most sensitive entries and orders
/// the rest by ascending aggregated D, ties by ascending flat index.
PruneOrder prune_order(const SpecificityScores& scores, std::span<const double> sensitivity,
                       double protect_fraction = 0.10, SpecificityAggregate aggregate = SpecificityAggregate::max);

/// floor(ratio * N) elements are pruned; ratio is a fraction of all N
/// parameters. Throws when that exceeds the unprotected count.
std::size_t prune_count(const PruneOrder& order, double ratio);
/// Keep-mask (1 = keep) over the flat index for one ratio.
std::vector<std::uint8_t> prune_mask(const PruneOrder& order, double ratio);

struct PrunePoint {
  double ratio = 0.0;
  std::size_t pruned = 0;
  double metric = 0.0;
};

struct PruneCurve {
  std::vector<PrunePoint> points;
  std::string ordering;
};

/// One-shot pruning: each ratio starts from a fresh copy of `model`.
template <class T>
PruneCurve prune_sweep(const Transformer<T>& model, const PruneOrder& order, std::span<const double> ratios,
                       const std::function<double(const Transformer<T>&)>& evaluate);

struct DistributionSummary {
  std::size_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population
  double min = 0.0;
  double max = 0.0;
  std::vector<double> quantile_levels;
  std::vector<double> quantiles;
  std::vector<double> histogram_edges;  // bins + 1 edges
  std::vector<std::size_t> histogram_counts;
};

struct SensitivityStats {
  DistributionSummary full;
  DistributionSummary trimmed;  // top ceil(trim_fraction * n) entries removed
  std::size_t removed = 0;
};

DistributionSummary summarize(std::span<const double> values, std::size_t bins = 50);
SensitivityStats sensitivity_stats(std::span<const double> values, std::size_t bins = 50, double trim_fraction = 0.01);

}  // namespace mmtlab
