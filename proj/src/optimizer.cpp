// SPDX-License-Identifier: Apache-2.0
#include "mmtlab/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "mmtlab/error.hpp"

namespace mmtlab {

void AdamConfig::validate() const {
  if (!(peak_lr > 0.0)) throw InvalidArgument("Adam: peak_lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw InvalidArgument("Adam: betas outside [0, 1)");
  if (!(eps > 0.0)) throw InvalidArgument("Adam: eps must be positive");
  if (!(weight_decay >= 0.0)) throw InvalidArgument("Adam: weight_decay must be non-negative");
}

nlohmann::json AdamConfig::to_json() const {
  return {{"peak_lr", peak_lr}, {"beta1", beta1}, {"beta2", beta2}, {"eps", eps}, {"weight_decay", weight_decay}};
}

AdamConfig AdamConfig::from_json(const nlohmann::json& j) {
  AdamConfig c;
  c.peak_lr = j.value("peak_lr", c.peak_lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  return c;
}

double learning_rate(std::uint64_t step, double peak, std::uint64_t warmup) {
  if (step == 0) return 0.0;
  const double s = static_cast<double>(step);
  if (warmup == 0) return peak;
  const double w = static_cast<double>(warmup);
  return peak * std::min(s / w, std::sqrt(w / s));
}

template <class T>
Adam<T>::Adam(const ParameterStore<T>& store, AdamConfig config) : config_(config) {
  config_.validate();
  for (std::size_t i = 0; i < store.entry_count(); ++i) {
    m_.emplace_back(store.entry(i).value.size(), 0.0);
    v_.emplace_back(store.entry(i).value.size(), 0.0);
  }
}

template <class T>
void Adam<T>::step(ParameterStore<T>& store, double lr) {
  if (store.entry_count() != m_.size()) throw InvalidArgument("Adam: store does not match the optimizer");
  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < store.entry_count(); ++i) {
    auto& e = store.entry(i);
    auto& m = m_[i];
    auto& v = v_[i];
    auto values = e.value.values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      double g = static_cast<double>(e.grad[j]);
      if (config_.weight_decay > 0.0) g += config_.weight_decay * static_cast<double>(values[j]);
      m[j] = b1 * m[j] + (1.0 - b1) * g;
      v[j] = b2 * v[j] + (1.0 - b2) * g * g;
      const double update = lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
      values[j] = static_cast<T>(static_cast<double>(values[j]) - update);
    }
  }
}

template <class T>
void Adam<T>::save(Checkpoint& ckpt, const ParameterStore<T>& store) const {
  for (std::size_t i = 0; i < store.entry_count(); ++i) {
    const auto& e = store.entry(i);
    ckpt.arrays.push_back({"adam.m/" + e.name, e.value.shape(), m_[i]});
    ckpt.arrays.push_back({"adam.v/" + e.name, e.value.shape(), v_[i]});
  }
  ckpt.meta["adam_steps"] = t_;
}

template <class T>
void Adam<T>::load(const Checkpoint& ckpt, const ParameterStore<T>& store) {
  for (std::size_t i = 0; i < store.entry_count(); ++i) {
    const auto& e = store.entry(i);
    for (auto [prefix, dst] : {std::pair{"adam.m/", &m_[i]}, std::pair{"adam.v/", &v_[i]}}) {
      const auto* a = ckpt.find(prefix + e.name);
      if (a == nullptr) throw IoError("checkpoint lacks optimizer state for " + e.name);
      const auto* data = std::get_if<std::vector<double>>(&a->data);
      if (data == nullptr || data->size() != dst->size()) throw IoError("bad optimizer state for " + e.name);
      *dst = *data;
    }
  }
  t_ = ckpt.meta.value("adam_steps", std::uint64_t{0});
}

template class Adam<float>;
template class Adam<double>;

}  // namespace mmtlab
