// SPDX-License-Identifier: Apache-2.0
//
// CSV and SVG artifacts. Every artifact starts with a provenance comment that
// carries the SHA-256 of the checkpoint it was computed from: a "# ..." line
// before the CSV header, an XML comment in SVG.
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmtlab/analysis.hpp"
#include "mmtlab/parameter_store.hpp"
#include "mmtlab/trainer.hpp"

namespace mmtlab {

/// Writes through a temporary file and renames it into place.
void write_file(const std::filesystem::path& path, const std::string& content);

std::string provenance_line(const std::string& checkpoint_sha256);

/// flat_index,name,offset,value
template <class T>
std::string vector_csv(std::span<const double> values, const ParameterStore<T>& store,
                       const std::string& checkpoint_sha256);

/// Square matrix; a missing coefficient is an empty field.
std::string matrix_csv(const CorrelationMatrix& m, const std::string& checkpoint_sha256);

/// ratio,pruned,metric
std::string curve_csv(const PruneCurve& curve, const std::string& checkpoint_sha256);

/// language,category,bleu,sentences,incomplete followed by one row per
/// category mean (language column "mean:<category>") and the overall mean.
std::string bleu_csv(const std::vector<LanguageBleu>& scores, const std::string& checkpoint_sha256);

/// view,count,mean,std,min,max,q... plus a histogram section.
std::string stats_csv(const SensitivityStats& stats, const std::string& checkpoint_sha256);

std::string heatmap_svg(const CorrelationMatrix& m, const std::string& title, const std::string& checkpoint_sha256);

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

std::string line_chart_svg(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::string& checkpoint_sha256);

std::string histogram_svg(const DistributionSummary& d, const std::string& title, const std::string& checkpoint_sha256);

}  // namespace mmtlab
