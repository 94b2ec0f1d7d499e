// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mmtlab/autodiff.hpp"

namespace mmtlab {

inline constexpr double kProbabilityFloor = 1e-9;

/// One switch per loss term. Translation: mmt, id_mmt. Denoising: e
/// (encoder head), d (decoder head), id_e, id_d.
struct LossToggles {
  bool mmt = true;
  bool e = false;
  bool d = false;
  bool id_mmt = false;
  bool id_e = false;
  bool id_d = false;

  /// regular, id, dae, cd, cd_id, or row1 .. row8. Throws UsageError otherwise.
  static LossToggles preset(std::string_view name);
  static std::vector<std::string> preset_names();

  bool any_denoising() const { return e || d; }
  bool any_id() const { return id_mmt || id_e || id_d; }
  /// Rejects an ID term whose task term is off.
  void validate() const;

  nlohmann::json to_json() const;
  static LossToggles from_json(const nlohmann::json& j);
  friend bool operator==(const LossToggles&, const LossToggles&) = default;
};

/// Loss terms in nats. Task terms are means over the passes of a batch.
struct LossBundle {
  double l_mmt = 0.0;
  double l_e = 0.0;
  double l_d = 0.0;
  double l_id_mmt = 0.0;
  double l_id_e = 0.0;
  double l_id_d = 0.0;
  double total = 0.0;
};

/// total = sum of enabled task terms + alpha * sum of enabled ID terms.
/// Disabled terms are zeroed in the result.
LossBundle compose_total(const LossBundle& terms, const LossToggles& toggles, double alpha);

/// Mean over positions of KL(p || q). `p` and `q` hold positions x support
/// values row-major; a support of 0 means one distribution.
double kl_divergence(std::span<const double> p, std::span<const double> q, std::size_t support = 0,
                     double floor = kProbabilityFloor);

/// (1/K) sum_i [KL(p_i || mean) + KL(mean || p_i)], averaged over positions.
double x_divergence(const std::vector<std::vector<double>>& dists, std::size_t support = 0,
                    double floor = kProbabilityFloor);

namespace ad {

/// Differentiable X-divergence between the softmax outputs of K logit
/// matrices at the rows where `score_mask` is set. No stop-gradient.
template <class T>
Var<T> x_divergence(std::span<const Var<T>> logits, std::span<const std::uint8_t> score_mask,
                    T floor = T(kProbabilityFloor));

}  // namespace ad

}  // namespace mmtlab
