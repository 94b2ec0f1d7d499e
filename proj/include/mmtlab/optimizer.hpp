// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "mmtlab/checkpoint.hpp"
#include "mmtlab/parameter_store.hpp"

namespace mmtlab {

struct AdamConfig {
  double peak_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double weight_decay = 0.0;

  void validate() const;
  nlohmann::json to_json() const;
  static AdamConfig from_json(const nlohmann::json& j);
};

/// Linear warmup to `peak` at step `warmup`, then peak * sqrt(warmup / step).
/// Steps are 1-based; step 0 returns 0.
double learning_rate(std::uint64_t step, double peak, std::uint64_t warmup);

template <class T>
class Adam {
 public:
  Adam(const ParameterStore<T>& store, AdamConfig config);

  /// One update from the store's gradient buffers.
  void step(ParameterStore<T>& store, double lr);
  std::uint64_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

  /// Moments go into "adam.m/<name>" and "adam.v/<name>" arrays.
  void save(Checkpoint& ckpt, const ParameterStore<T>& store) const;
  void load(const Checkpoint& ckpt, const ParameterStore<T>& store);

 private:
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace mmtlab
