// SPDX-License-Identifier: Apache-2.0
#include "mmtlab/config.hpp"

#include <fstream>

#include <fmt/format.h>

#include "mmtlab/error.hpp"
#include "mmtlab/report_io.hpp"

namespace mmtlab {

nlohmann::json AnalysisConfig::to_json() const {
  return {{"batches", batches},
          {"batch_tokens", batch_tokens},
          {"seed", seed},
          {"group_fraction", group_fraction},
          {"protect_fraction", protect_fraction},
          {"aggregate", aggregate_name(aggregate)},
          {"ratios", ratios},
          {"beam", beam},
          {"bleu_max_sentences", bleu_max_sentences}};
}

AnalysisConfig AnalysisConfig::from_json(const nlohmann::json& j) {
  AnalysisConfig c;
  c.batches = j.value("batches", c.batches);
  c.batch_tokens = j.value("batch_tokens", c.batch_tokens);
  c.seed = j.value("seed", c.seed);
  c.group_fraction = j.value("group_fraction", c.group_fraction);
  c.protect_fraction = j.value("protect_fraction", c.protect_fraction);
  if (j.contains("aggregate")) c.aggregate = parse_aggregate(j.at("aggregate").get<std::string>());
  c.ratios = j.value("ratios", c.ratios);
  c.beam = j.value("beam", c.beam);
  c.bleu_max_sentences = j.value("bleu_max_sentences", c.bleu_max_sentences);
  return c;
}

std::string tag_policy_name(TagPolicy p) {
  return p == TagPolicy::target_language ? "target_language" : "source_language";
}

TagPolicy parse_tag_policy(const std::string& s) {
  if (s == "target_language" || s == "target") return TagPolicy::target_language;
  if (s == "source_language" || s == "source") return TagPolicy::source_language;
  throw UsageError("unknown tag policy '" + s + "'");
}

namespace {

std::string rounding_name(SelectionRounding r) {
  switch (r) {
    case SelectionRounding::round: return "round";
    case SelectionRounding::floor: return "floor";
    case SelectionRounding::ceil: return "ceil";
  }
  return "round";
}

SelectionRounding parse_rounding(const std::string& s) {
  if (s == "round") return SelectionRounding::round;
  if (s == "floor") return SelectionRounding::floor;
  if (s == "ceil") return SelectionRounding::ceil;
  throw UsageError("unknown rounding rule '" + s + "'");
}

}  // namespace

void ExperimentConfig::validate() const {
  if (precision != 32 && precision != 64) throw InvalidArgument("config: precision must be 32 or 64");
  if (threads == 0) throw InvalidArgument("config: threads must be positive");
  train.validate();
  sampling.validate();
  noise.validate();
  if (analysis.batches == 0) throw InvalidArgument("config: analysis.batches must be positive");
}

nlohmann::json ExperimentConfig::to_json() const {
  return {{"schema_version", kConfigSchemaVersion},
          {"precision", precision},
          {"direction", direction_name(direction)},
          {"manifest", manifest.generic_string()},
          {"output_dir", output_dir.generic_string()},
          {"threads", threads},
          {"model", model.to_json()},
          {"train", train.to_json()},
          {"sampling",
           {{"translation_temperature", sampling.translation_temperature},
            {"monolingual_temperature", sampling.monolingual_temperature},
            {"mix_ratio", sampling.mix_ratio}}},
          {"noise",
           {{"mask_ratio", noise.mask_ratio},
            {"keep_prob", noise.keep_prob},
            {"random_prob", noise.random_prob},
            {"rounding", rounding_name(noise.rounding)}}},
          {"tag_policy", tag_policy_name(tag_policy)},
          {"analysis", analysis.to_json()}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  const int version = j.value("schema_version", kConfigSchemaVersion);
  if (version != kConfigSchemaVersion) {
    throw UsageError(fmt::format("config schema_version {} is not supported (expected {})", version,
                                 kConfigSchemaVersion));
  }
  ExperimentConfig c;
  c.precision = j.value("precision", c.precision);
  if (j.contains("direction")) c.direction = parse_direction(j.at("direction").get<std::string>());
  c.manifest = j.value("manifest", c.manifest.string());
  c.output_dir = j.value("output_dir", c.output_dir.string());
  c.threads = j.value("threads", c.threads);
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
  if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
  if (j.contains("sampling")) {
    const auto& s = j.at("sampling");
    c.sampling.translation_temperature = s.value("translation_temperature", c.sampling.translation_temperature);
    c.sampling.monolingual_temperature = s.value("monolingual_temperature", c.sampling.monolingual_temperature);
    c.sampling.mix_ratio = s.value("mix_ratio", c.sampling.mix_ratio);
  }
  if (j.contains("noise")) {
    const auto& n = j.at("noise");
    c.noise.mask_ratio = n.value("mask_ratio", c.noise.mask_ratio);
    c.noise.keep_prob = n.value("keep_prob", c.noise.keep_prob);
    c.noise.random_prob = n.value("random_prob", c.noise.random_prob);
    if (n.contains("rounding")) c.noise.rounding = parse_rounding(n.at("rounding").get<std::string>());
  }
  if (j.contains("tag_policy")) c.tag_policy = parse_tag_policy(j.at("tag_policy").get<std::string>());
  if (j.contains("analysis")) c.analysis = AnalysisConfig::from_json(j.at("analysis"));
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(fmt::format("config {} is not valid JSON: {}", path.string(), e.what()));
  }
  return from_json(j);
}

void ExperimentConfig::save(const std::filesystem::path& path) const { write_file(path, to_json().dump(2) + "\n"); }

StreamOptions ExperimentConfig::stream_options() const {
  StreamOptions o;
  o.batch_tokens = train.batch_tokens;
  o.max_positions = model.max_positions;
  o.tag_policy = tag_policy;
  o.noise = noise;
  o.seed = train.seed;
  return o;
}

}  // namespace mmtlab
