// SPDX-License-Identifier: Apache-2.0
#include "mmtlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace mmtlab {

namespace {

template <class T>
T evaluate(const TapeObjective<T>& f, ParameterStore<T>& store) {
  ad::Tape<T> tape(false);
  auto params = tape.bind(store);
  return f(tape, params).item();
}

}  // namespace

template <class T>
GradCheckResult finite_difference_check(const TapeObjective<T>& f, ParameterStore<T>& store,
                                        const GradCheckOptions& options) {
  store.zero_grad();
  {
    ad::Tape<T> tape;
    auto params = tape.bind(store);
    tape.backward(f(tape, params));
  }
  const auto analytic = store.flat_grads();

  const T base = evaluate(f, store);
  if (evaluate(f, store) != base) {
    throw InvalidArgument("finite_difference_check: objective is not deterministic under fixed seeds");
  }

  std::vector<std::size_t> indices(store.element_count());
  std::iota(indices.begin(), indices.end(), std::size_t{0});
  if (options.sample != 0 && options.sample < indices.size()) {
    RngStream rng(options.seed, make_stream_id(StreamPurpose::test, 0));
    for (std::size_t i = 0; i < options.sample; ++i) {
      std::swap(indices[i], indices[i + rng.uniform_index(indices.size() - i)]);
    }
    indices.resize(options.sample);
  }

  GradCheckResult result;
  const T eps = static_cast<T>(options.eps);
  for (const std::size_t flat : indices) {
    T& slot = store.raw(flat);
    const T saved = slot;
    slot = saved + eps;
    const T up = evaluate(f, store);
    slot = saved - eps;
    const T down = evaluate(f, store);
    slot = saved;
    const double numeric = (static_cast<double>(up) - static_cast<double>(down)) / (2.0 * static_cast<double>(eps));
    const double a = static_cast<double>(analytic[flat]);
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), options.floor});
    ++result.checked;
    if (rel > result.max_relative_error || result.checked == 1) {
      result.max_relative_error = rel;
      result.worst_flat_index = flat;
      result.worst_analytic = a;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

template GradCheckResult finite_difference_check(const TapeObjective<float>&, ParameterStore<float>&,
                                                 const GradCheckOptions&);
template GradCheckResult finite_difference_check(const TapeObjective<double>&, ParameterStore<double>&,
                                                 const GradCheckOptions&);

}  // namespace mmtlab
