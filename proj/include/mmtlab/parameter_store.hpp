// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmtlab/tensor.hpp"

namespace mmtlab {

struct FlatLocation {
  std::size_t entry = 0;
  std::size_t offset = 0;
};

template <class T>
struct ParameterEntry {
  std::string name;
  Tensor<T> value;
  std::vector<T> grad;
  // 1 = live, 0 = pruned. Pruned elements read as exactly zero in forwards.
  std::vector<std::uint8_t> keep;
  std::size_t flat_offset = 0;
};

/// Named model parameters with gradient buffers, a prune mask, and a flat
/// index. The flat index enumerates entries in insertion order and elements
/// in row-major order, so it is stable for a given model configuration.
template <class T>
class ParameterStore {
 public:
  /// Adds a parameter; returns its entry index. Names must be unique.
  std::size_t add(std::string name, Tensor<T> init);

  std::size_t entry_count() const { return entries_.size(); }
  std::size_t element_count() const { return element_count_; }

  const ParameterEntry<T>& entry(std::size_t i) const { return entries_.at(i); }
  ParameterEntry<T>& entry(std::size_t i) { return entries_.at(i); }
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  std::size_t flat_index(std::string_view name, std::size_t offset) const;
  FlatLocation locate(std::size_t flat) const;
  std::string flat_name(std::size_t flat) const { return entries_[locate(flat).entry].name; }

  /// Value as seen by a forward pass (pruned elements are zero).
  T effective(std::size_t flat) const;
  T& raw(std::size_t flat);

  void zero_grad();
  /// Adds `grad` into the buffer of `entry`; pruned elements stay zero.
  void accumulate_grad(std::size_t entry, std::span<const T> grad);

  /// Installs a prune mask over the whole flat domain (1 = keep).
  void set_prune_mask(std::span<const std::uint8_t> keep);
  void clear_prune_mask();
  std::vector<std::uint8_t> prune_mask() const;
  std::size_t pruned_count() const;

  std::vector<T> flat_values() const;
  std::vector<T> flat_effective_values() const;
  std::vector<T> flat_grads() const;

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      const auto& x = a.entries_[i];
      const auto& y = b.entries_[i];
      if (x.name != y.name || !(x.value == y.value) || x.keep != y.keep) return false;
    }
    return true;
  }

 private:
  std::vector<ParameterEntry<T>> entries_;
  std::size_t element_count_ = 0;
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace mmtlab
