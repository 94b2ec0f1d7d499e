// SPDX-License-Identifier: Apache-2.0
#include "mmtlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "mmtlab/error.hpp"

namespace mmtlab {

std::string analysis_task_name(AnalysisTask task) {
  return task == AnalysisTask::translation ? "translation" : "denoising";
}

AnalysisTask parse_analysis_task(const std::string& name) {
  if (name == "translation" || name == "mmt") return AnalysisTask::translation;
  if (name == "denoising" || name == "cd") return AnalysisTask::denoising;
  throw UsageError("unknown analysis task '" + name + "'");
}

std::vector<double> first_order_sensitivity(std::span<const double> theta, std::span<const double> grad) {
  if (theta.size() != grad.size()) throw ShapeError("sensitivity: parameter and gradient sizes differ");
  std::vector<double> s(theta.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::abs(theta[i] * grad[i]);
  return s;
}

template <class T>
std::vector<double> sensitivity(const Transformer<T>& model, std::span<const Batch> batches, AnalysisTask task) {
  if (batches.empty()) throw InvalidArgument("sensitivity: empty batch set");
  ParameterStore<T> snapshot = model.parameters();
  std::vector<double> theta;
  for (const T v : snapshot.flat_effective_values()) theta.push_back(static_cast<double>(v));
  std::vector<double> acc(theta.size(), 0.0);
  for (const auto& batch : batches) {
    snapshot.zero_grad();
    ad::Tape<T> tape;
    const auto params = tape.bind(snapshot);
    const std::span<const std::int32_t> target(batch.target);
    const std::span<const std::uint8_t> mask(batch.score_mask);
    ad::Var<T> loss;
    if (task == AnalysisTask::translation) {
      if (batch.task != Task::translation) throw InvalidArgument("sensitivity: expected translation batches");
      loss = ad::masked_cross_entropy(model.forward_mmt(tape, params, batch, nullptr).decoder_logits, target, mask);
    } else {
      if (batch.task != Task::denoising) throw InvalidArgument("sensitivity: expected denoising batches");
      const auto out = model.forward_cd(tape, params, batch, nullptr);
      loss = ad::masked_cross_entropy(*out.encoder_logits, target, mask) +
             ad::masked_cross_entropy(out.decoder_logits, target, mask);
    }
    tape.backward(loss);
    const auto grads = snapshot.flat_grads();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += std::abs(theta[i] * static_cast<double>(grads[i]));
  }
  for (auto& v : acc) v /= static_cast<double>(batches.size());
  return acc;
}

namespace {

std::uint64_t analysis_stream(AnalysisTask task, std::uint64_t kind, std::uint64_t lang) {
  return (task == AnalysisTask::translation ? 0 : 4096) + kind * 1024 + lang;
}

Task batch_task(AnalysisTask task) { return task == AnalysisTask::translation ? Task::translation : Task::denoising; }

}  // namespace

std::vector<Batch> language_batches(const TrainingCorpus& corpus, AnalysisTask task, LanguageId language,
                                    std::size_t count, const StreamOptions& options, const SamplingConfig&) {
  if (language >= corpus.languages.size()) throw InvalidArgument("language_batches: unknown language");
  std::vector<Batch> out;
  for (std::size_t i = 0; i < count; ++i) {
    RngStream rng(options.seed, make_stream_id(StreamPurpose::analysis, i, analysis_stream(task, 0, language)));
    out.push_back(sample_batch(corpus, batch_task(task), [language](RngStream&) { return language; }, options, rng));
  }
  return out;
}

std::vector<Batch> mixed_batches(const TrainingCorpus& corpus, AnalysisTask task, std::optional<LanguageId> excluded,
                                 std::size_t count, const StreamOptions& options, const SamplingConfig& sampling) {
  const auto sizes = task == AnalysisTask::translation ? corpus.parallel_sizes() : corpus.denoise_sizes();
  const double temperature =
      task == AnalysisTask::translation ? sampling.translation_temperature : sampling.monolingual_temperature;
  std::vector<LanguageId> ids;
  std::vector<std::size_t> kept;
  for (LanguageId l = 0; l < sizes.size(); ++l) {
    if (excluded && *excluded == l) continue;
    ids.push_back(l);
    kept.push_back(sizes[l]);
  }
  if (ids.empty()) throw InvalidArgument("mixed_batches: no languages left");
  const auto probs = temperature_probabilities(kept, temperature);
  const std::uint64_t kind = excluded ? 1 : 2;
  const std::uint64_t lang = excluded ? *excluded : 0;
  std::vector<Batch> out;
  for (std::size_t i = 0; i < count; ++i) {
    RngStream rng(options.seed, make_stream_id(StreamPurpose::analysis, i, analysis_stream(task, kind, lang)));
    out.push_back(sample_batch(
        corpus, batch_task(task), [&](RngStream& r) { return ids[sample_categorical(probs, r)]; }, options, rng));
  }
  return out;
}

std::vector<double> SensitivityReport::mean_over_languages() const {
  if (per_language.empty()) throw InvalidArgument("SensitivityReport: no languages");
  std::vector<double> m(parameter_count(), 0.0);
  for (const auto& v : per_language) {
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += v[i];
  }
  for (auto& v : m) v /= static_cast<double>(per_language.size());
  return m;
}

std::vector<double> SensitivityReport::group_ranking() const {
  if (pooled.empty()) return mean_over_languages();
  if (pooled.size() != parameter_count()) throw ShapeError("SensitivityReport: pooled size differs");
  return pooled;
}

template <class T>
SensitivityReport sensitivity_report(const Transformer<T>& model, const TrainingCorpus& corpus, AnalysisTask task,
                                     std::size_t batches, const StreamOptions& options, const SamplingConfig& sampling,
                                     bool with_complement, bool with_pooled) {
  if (batches == 0) throw InvalidArgument("sensitivity_report: batch count must be positive");
  SensitivityReport r;
  r.task = task;
  r.batches = batches;
  r.seed = options.seed;
  for (LanguageId l = 0; l < corpus.languages.size(); ++l) {
    r.languages.push_back(corpus.languages[l].code);
    const auto b = language_batches(corpus, task, l, batches, options, sampling);
    r.per_language.push_back(sensitivity(model, std::span<const Batch>(b), task));
    if (with_complement) {
      const auto rest = mixed_batches(corpus, task, l, batches, options, sampling);
      r.complement.push_back(sensitivity(model, std::span<const Batch>(rest), task));
    }
  }
  if (with_pooled) {
    const auto all = mixed_batches(corpus, task, std::nullopt, batches, options, sampling);
    r.pooled = sensitivity(model, std::span<const Batch>(all), task);
  }
  return r;
}

std::vector<double> specificity(std::span<const double> s_lang, std::span<const double> s_rest, double sigma) {
  if (s_lang.size() != s_rest.size()) throw ShapeError("specificity: report sizes differ");
  std::vector<double> d(s_lang.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = (s_lang[i] - s_rest[i]) / (s_rest[i] + sigma);
  return d;
}

SpecificityScores specificity_scores(const SensitivityReport& report, double sigma) {
  if (report.complement.size() != report.per_language.size()) {
    throw InvalidArgument("specificity: missing complement sensitivity");
  }
  SpecificityScores s;
  s.languages = report.languages;
  s.sigma = sigma;
  for (std::size_t l = 0; l < report.per_language.size(); ++l) {
    s.per_language.push_back(specificity(report.per_language[l], report.complement[l], sigma));
  }
  return s;
}

std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("pearson: sizes differ");
  if (a.size() < 2) return std::nullopt;
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i] - ma;
    const double y = b[i] - mb;
    sab += x * y;
    saa += x * x;
    sbb += y * y;
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::string pcc_group_name(PccGroup g) {
  switch (g) {
    case PccGroup::all: return "all";
    case PccGroup::high: return "high";
    case PccGroup::low: return "low";
  }
  return "all";
}

PccGroup parse_pcc_group(const std::string& name) {
  if (name == "all") return PccGroup::all;
  if (name == "high") return PccGroup::high;
  if (name == "low") return PccGroup::low;
  throw UsageError("invalid group '" + name + "' (expected all, high or low)");
}

namespace {

// Flat indices sorted by descending value, ties by ascending index.
std::vector<std::size_t> rank_descending(std::span<const double> values) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  return idx;
}

std::size_t top_count(std::size_t n, double fraction) {
  return std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
}

}  // namespace

std::vector<std::size_t> group_indices(std::span<const double> ranking, PccGroup group, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw InvalidArgument("group fraction outside [0, 1]");
  if (group == PccGroup::all) {
    std::vector<std::size_t> all(ranking.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  const auto ranked = rank_descending(ranking);
  const std::size_t top = top_count(ranking.size(), fraction);
  std::vector<std::size_t> out = group == PccGroup::high
                                     ? std::vector<std::size_t>(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(top))
                                     : std::vector<std::size_t>(ranked.begin() + static_cast<std::ptrdiff_t>(top), ranked.end());
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<double> CorrelationMatrix::mean_off_diagonal() const {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (std::size_t j = 0; j < values[i].size(); ++j) {
      if (i != j && values[i][j]) {
        s += *values[i][j];
        ++n;
      }
    }
  }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

CorrelationMatrix pcc_matrix(const SensitivityReport& report, PccGroup group, double fraction) {
  const std::size_t L = report.per_language.size();
  if (L < 2) throw InvalidArgument("pcc_matrix: at least 2 languages are required");
  const auto idx = group_indices(report.group_ranking(), group, fraction);
  std::vector<std::vector<double>> sub(L);
  for (std::size_t l = 0; l < L; ++l) {
    sub[l].reserve(idx.size());
    for (const auto i : idx) sub[l].push_back(report.per_language[l][i]);
  }
  CorrelationMatrix m;
  m.labels = report.languages;
  m.group = group;
  m.values.assign(L, std::vector<std::optional<double>>(L));
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = i; j < L; ++j) {
      const auto r = i == j ? (pearson(sub[i], sub[i]) ? std::optional<double>(1.0) : std::nullopt)
                            : pearson(sub[i], sub[j]);
      m.values[i][j] = r;
      m.values[j][i] = r;
    }
  }
  return m;
}

std::optional<double> cross_task_pcc(const SensitivityReport& mmt, const SensitivityReport& cd, std::size_t language) {
  if (language >= mmt.per_language.size() || language >= cd.per_language.size()) {
    throw InvalidArgument("cross_task_pcc: unknown language");
  }
  if (mmt.parameter_count() != cd.parameter_count()) throw ShapeError("cross_task_pcc: reports cover different models");
  return pearson(mmt.per_language[language], cd.per_language[language]);
}

CorrelationMatrix cross_task_matrix(const SensitivityReport& mmt, const SensitivityReport& cd, PccGroup group,
                                    double fraction) {
  const std::size_t L = mmt.per_language.size();
  if (L == 0 || cd.per_language.size() != L) throw InvalidArgument("cross_task_matrix: language sets differ");
  if (mmt.parameter_count() != cd.parameter_count()) throw ShapeError("cross_task_matrix: reports cover different models");
  auto ranking = mmt.group_ranking();
  const auto other = cd.group_ranking();
  for (std::size_t i = 0; i < ranking.size(); ++i) ranking[i] = 0.5 * (ranking[i] + other[i]);
  const auto idx = group_indices(ranking, group, fraction);
  auto restrict = [&](const std::vector<double>& v) {
    std::vector<double> out;
    out.reserve(idx.size());
    for (const auto i : idx) out.push_back(v[i]);
    return out;
  };
  CorrelationMatrix m;
  m.labels = mmt.languages;
  m.group = group;
  m.cross_task = true;
  m.values.assign(L, std::vector<std::optional<double>>(L));
  for (std::size_t i = 0; i < L; ++i) {
    const auto a = restrict(mmt.per_language[i]);
    for (std::size_t j = 0; j < L; ++j) m.values[i][j] = pearson(a, restrict(cd.per_language[j]));
  }
  return m;
}

std::string aggregate_name(SpecificityAggregate a) { return a == SpecificityAggregate::max ? "max" : "mean"; }

SpecificityAggregate parse_aggregate(const std::string& name) {
  if (name == "max") return SpecificityAggregate::max;
  if (name == "mean") return SpecificityAggregate::mean;
  throw UsageError("unknown specificity aggregate '" + name + "'");
}

PruneOrder prune_order(const SpecificityScores& scores, std::span<const double> sensitivity, double protect_fraction,
                       SpecificityAggregate aggregate) {
  if (scores.per_language.empty()) throw InvalidArgument("prune_order: no specificity scores");
  const std::size_t n = sensitivity.size();
  for (const auto& d : scores.per_language) {
    if (d.size() != n) throw ShapeError("prune_order: specificity and sensitivity sizes differ");
  }
  PruneOrder o;
  o.parameter_count = n;
  o.aggregate = aggregate;
  o.protected_count = top_count(n, protect_fraction);
  const auto ranked = rank_descending(sensitivity);
  std::vector<std::uint8_t> is_protected(n, 0);
  for (std::size_t k = 0; k < o.protected_count; ++k) is_protected[ranked[k]] = 1;

  std::vector<double> agg(n);
  for (std::size_t i = 0; i < n; ++i) {
    double v = aggregate == SpecificityAggregate::max ? -std::numeric_limits<double>::infinity() : 0.0;
    for (const auto& d : scores.per_language) v = aggregate == SpecificityAggregate::max ? std::max(v, d[i]) : v + d[i];
    agg[i] = aggregate == SpecificityAggregate::max ? v : v / static_cast<double>(scores.per_language.size());
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_protected[i]) o.order.push_back(i);
  }
  std::stable_sort(o.order.begin(), o.order.end(), [&](std::size_t a, std::size_t b) { return agg[a] < agg[b]; });
  return o;
}

std::size_t prune_count(const PruneOrder& order, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw InvalidArgument(fmt::format("prune ratio {} outside [0, 1]", ratio));
  const auto count = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(order.parameter_count) + 1e-9));
  if (count > order.order.size()) {
    throw InvalidArgument(fmt::format("prune ratio {} exceeds the unprotected fraction ({} of {} parameters)", ratio,
                                      order.order.size(), order.parameter_count));
  }
  return count;
}

std::vector<std::uint8_t> prune_mask(const PruneOrder& order, double ratio) {
  const std::size_t count = prune_count(order, ratio);
  std::vector<std::uint8_t> keep(order.parameter_count, 1);
  for (std::size_t k = 0; k < count; ++k) keep[order.order[k]] = 0;
  return keep;
}

template <class T>
PruneCurve prune_sweep(const Transformer<T>& model, const PruneOrder& order, std::span<const double> ratios,
                       const std::function<double(const Transformer<T>&)>& evaluate) {
  if (order.parameter_count != model.parameter_count()) throw ShapeError("prune_sweep: order does not match the model");
  for (std::size_t i = 1; i < ratios.size(); ++i) {
    if (!(ratios[i] > ratios[i - 1])) throw InvalidArgument("prune_sweep: ratios must be strictly increasing");
  }
  PruneCurve curve;
  curve.ordering = fmt::format("ascending {}-over-languages specificity; top {} of {} most sensitive protected; "
                               "ratio over all parameters",
                               aggregate_name(order.aggregate), order.protected_count, order.parameter_count);
  const auto base_mask = model.parameters().prune_mask();
  for (const double r : ratios) {
    Transformer<T> copy = model;
    auto keep = prune_mask(order, r);
    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = static_cast<std::uint8_t>(keep[i] & base_mask[i]);
    apply_prune_mask(copy.parameters(), std::span<const std::uint8_t>(keep));
    curve.points.push_back({r, prune_count(order, r), evaluate(copy)});
  }
  return curve;
}

namespace {

double quantile_sorted(const std::vector<double>& s, double q) {
  if (s.empty()) return 0.0;
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

}  // namespace

DistributionSummary summarize(std::span<const double> values, std::size_t bins) {
  DistributionSummary d;
  d.count = values.size();
  d.quantile_levels = {0.0, 0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99, 1.0};
  if (values.empty() || bins == 0) return d;
  std::vector<double> s(values.begin(), values.end());
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  d.mean = std::accumulate(s.begin(), s.end(), 0.0) / n;
  double ss = 0.0;
  for (const double v : s) ss += (v - d.mean) * (v - d.mean);
  d.stddev = std::sqrt(ss / n);
  d.min = s.front();
  d.max = s.back();
  for (const double q : d.quantile_levels) d.quantiles.push_back(quantile_sorted(s, q));
  const double width = (d.max - d.min) / static_cast<double>(bins);
  for (std::size_t b = 0; b <= bins; ++b) d.histogram_edges.push_back(d.min + width * static_cast<double>(b));
  d.histogram_counts.assign(bins, 0);
  for (const double v : s) {
    std::size_t b = width > 0.0 ? static_cast<std::size_t>((v - d.min) / width) : 0;
    d.histogram_counts[std::min(b, bins - 1)]++;
  }
  return d;
}

SensitivityStats sensitivity_stats(std::span<const double> values, std::size_t bins, double trim_fraction) {
  SensitivityStats st;
  st.full = summarize(values, bins);
  std::vector<double> s(values.begin(), values.end());
  std::sort(s.begin(), s.end());
  st.removed = top_count(s.size(), trim_fraction);
  s.resize(s.size() - st.removed);
  st.trimmed = summarize(s, bins);
  return st;
}

template std::vector<double> sensitivity(const Transformer<float>&, std::span<const Batch>, AnalysisTask);
template std::vector<double> sensitivity(const Transformer<double>&, std::span<const Batch>, AnalysisTask);
template SensitivityReport sensitivity_report(const Transformer<float>&, const TrainingCorpus&, AnalysisTask,
                                              std::size_t, const StreamOptions&, const SamplingConfig&, bool, bool);
template SensitivityReport sensitivity_report(const Transformer<double>&, const TrainingCorpus&, AnalysisTask,
                                              std::size_t, const StreamOptions&, const SamplingConfig&, bool, bool);
template PruneCurve prune_sweep(const Transformer<float>&, const PruneOrder&, std::span<const double>,
                                const std::function<double(const Transformer<float>&)>&);
template PruneCurve prune_sweep(const Transformer<double>&, const PruneOrder&, std::span<const double>,
                                const std::function<double(const Transformer<double>&)>&);

}  // namespace mmtlab
