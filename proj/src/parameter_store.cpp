// SPDX-License-Identifier: Apache-2.0
#include "mmtlab/parameter_store.hpp"

#include <algorithm>

namespace mmtlab {

template <class T>
std::size_t ParameterStore<T>::add(std::string name, Tensor<T> init) {
  if (find(name)) throw InvalidArgument("ParameterStore: duplicate parameter '" + name + "'");
  ParameterEntry<T> e;
  e.name = std::move(name);
  e.grad.assign(init.size(), T(0));
  e.keep.assign(init.size(), 1);
  e.flat_offset = element_count_;
  element_count_ += init.size();
  e.value = std::move(init);
  entries_.push_back(std::move(e));
  return entries_.size() - 1;
}

template <class T>
std::optional<std::size_t> ParameterStore<T>::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  return std::nullopt;
}

template <class T>
std::size_t ParameterStore<T>::index_of(std::string_view name) const {
  auto i = find(name);
  if (!i) throw InvalidArgument("ParameterStore: no parameter named '" + std::string(name) + "'");
  return *i;
}

template <class T>
std::size_t ParameterStore<T>::flat_index(std::string_view name, std::size_t offset) const {
  const auto& e = entries_[index_of(name)];
  if (offset >= e.value.size()) throw InvalidArgument("ParameterStore: offset out of range");
  return e.flat_offset + offset;
}

template <class T>
FlatLocation ParameterStore<T>::locate(std::size_t flat) const {
  if (flat >= element_count_) throw InvalidArgument("ParameterStore: flat index out of range");
  // Entries are sorted by flat_offset; find the last one starting at or before `flat`.
  auto it = std::upper_bound(entries_.begin(), entries_.end(), flat,
                             [](std::size_t f, const ParameterEntry<T>& e) { return f < e.flat_offset; });
  const std::size_t entry = static_cast<std::size_t>(std::distance(entries_.begin(), it)) - 1;
  return {entry, flat - entries_[entry].flat_offset};
}

template <class T>
T ParameterStore<T>::effective(std::size_t flat) const {
  const auto loc = locate(flat);
  const auto& e = entries_[loc.entry];
  return e.keep[loc.offset] ? e.value[loc.offset] : T(0);
}

template <class T>
T& ParameterStore<T>::raw(std::size_t flat) {
  const auto loc = locate(flat);
  return entries_[loc.entry].value[loc.offset];
}

template <class T>
void ParameterStore<T>::zero_grad() {
  for (auto& e : entries_) std::fill(e.grad.begin(), e.grad.end(), T(0));
}

template <class T>
void ParameterStore<T>::accumulate_grad(std::size_t entry, std::span<const T> grad) {
  auto& e = entries_.at(entry);
  if (grad.size() != e.grad.size()) throw ShapeError("accumulate_grad: size mismatch for " + e.name);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (e.keep[i]) e.grad[i] += grad[i];
  }
}

template <class T>
void ParameterStore<T>::set_prune_mask(std::span<const std::uint8_t> keep) {
  if (keep.size() != element_count_) {
    throw ShapeError("set_prune_mask: mask has " + std::to_string(keep.size()) +
                     " elements, store has " + std::to_string(element_count_));
  }
  for (auto& e : entries_) {
    std::copy_n(keep.begin() + static_cast<std::ptrdiff_t>(e.flat_offset), e.keep.size(), e.keep.begin());
  }
}

template <class T>
void ParameterStore<T>::clear_prune_mask() {
  for (auto& e : entries_) std::fill(e.keep.begin(), e.keep.end(), std::uint8_t{1});
}

template <class T>
std::vector<std::uint8_t> ParameterStore<T>::prune_mask() const {
  std::vector<std::uint8_t> out;
  out.reserve(element_count_);
  for (const auto& e : entries_) out.insert(out.end(), e.keep.begin(), e.keep.end());
  return out;
}

template <class T>
std::size_t ParameterStore<T>::pruned_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(std::count(e.keep.begin(), e.keep.end(), 0));
  return n;
}

template <class T>
std::vector<T> ParameterStore<T>::flat_values() const {
  std::vector<T> out;
  out.reserve(element_count_);
  for (const auto& e : entries_) out.insert(out.end(), e.value.values().begin(), e.value.values().end());
  return out;
}

template <class T>
std::vector<T> ParameterStore<T>::flat_effective_values() const {
  std::vector<T> out;
  out.reserve(element_count_);
  for (const auto& e : entries_) {
    for (std::size_t i = 0; i < e.value.size(); ++i) out.push_back(e.keep[i] ? e.value[i] : T(0));
  }
  return out;
}

template <class T>
std::vector<T> ParameterStore<T>::flat_grads() const {
  std::vector<T> out;
  out.reserve(element_count_);
  for (const auto& e : entries_) out.insert(out.end(), e.grad.begin(), e.grad.end());
  return out;
}

template class ParameterStore<float>;
template class ParameterStore<double>;

}  // namespace mmtlab
