// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

#include "mmtlab/autodiff.hpp"

namespace mmtlab {

struct GradCheckOptions {
  double eps = 1e-6;
  // 0 checks every element; otherwise a seeded sample of this many elements.
  std::size_t sample = 0;
  std::uint64_t seed = 0;
  // Denominator floor, so gradients that are zero up to rounding are
  // compared absolutely.
  double floor = 1e-5;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_flat_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// Scalar objective built on a tape from the bound parameters of a store.
template <class T>
using TapeObjective = std::function<ad::Var<T>(ad::Tape<T>&, std::span<const ad::Var<T>>)>;

/// Compares reverse-mode gradients of `f` with central differences.
/// The relative error of an element is
/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
/// Throws InvalidArgument if two evaluations at the same point disagree.
/// The store's values are restored before returning; its gradient buffers
/// hold the analytic gradient afterwards.
template <class T>
GradCheckResult finite_difference_check(const TapeObjective<T>& f, ParameterStore<T>& store,
                                        const GradCheckOptions& options = {});

}  // namespace mmtlab
