// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over dense tensors.
//
// A Tape records every op in creation order, which is already a topological
// order, so the backward sweep simply walks the node list in reverse. Values
// are immutable once recorded. Parameters enter a tape through bind(), which
// snapshots the (prune-masked) values and routes gradients back into the
// store's buffers at the end of backward().
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

#include "mmtlab/parameter_store.hpp"
#include "mmtlab/rng.hpp"
#include "mmtlab/tensor.hpp"

namespace mmtlab::ad {

template <class T>
class Tape;

template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  T item() const { return value().item(); }
};

template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  /// With `record_gradients` false no backward closures are kept (inference).
  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t node_count() const { return nodes_.size(); }

  Var<T> constant(Tensor<T> value);
  /// A free differentiable leaf; its gradient stays on the tape (see grad_of).
  Var<T> leaf(Tensor<T> value);
  /// Binds every entry of `store` as a differentiable leaf.
  std::vector<Var<T>> bind(ParameterStore<T>& store);

  Var<T> record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> parents,
                BackwardFn backward);
  Var<T> record(std::string_view op, Tensor<T> value, std::span<const Var<T>> parents,
                BackwardFn backward);

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  /// Gradient buffer of a node, zero-initialised on first access.
  std::span<T> grad(std::size_t id);
  std::span<const T> grad_of(Var<T> v) const { return nodes_[v.id].grad; }

  /// Sweeps gradients from a scalar loss. Gradients of bound parameters are
  /// added to their store buffers; calling twice accumulates twice.
  void backward(Var<T> loss);

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    bool needs_grad = false;
    BackwardFn backward;
    std::string_view op;
  };
  struct Binding {
    std::size_t node;
    ParameterStore<T>* store;
    std::size_t entry;
  };

  bool recording_;
  std::vector<Node> nodes_;
  std::vector<Binding> bindings_;
};

// ---- ops --------------------------------------------------------------------

template <class T> Var<T> matmul(Var<T> a, Var<T> b);
template <class T> Var<T> add(Var<T> a, Var<T> b);
template <class T> Var<T> sub(Var<T> a, Var<T> b);
template <class T> Var<T> mul(Var<T> a, Var<T> b);
template <class T> Var<T> scale(Var<T> a, T factor);
/// a[r, c] + bias[c]
template <class T> Var<T> add_bias(Var<T> a, Var<T> bias);
template <class T> Var<T> relu(Var<T> a);
template <class T> Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));
/// Row-wise softmax over the last dimension.
template <class T> Var<T> softmax(Var<T> a);
template <class T> Var<T> log_softmax(Var<T> a);
/// log(max(a, floor)); the gradient is zero where the clamp is active.
template <class T> Var<T> log_clamped(Var<T> a, T floor);
/// Rows of `table` selected by `ids`.
template <class T> Var<T> embedding(Var<T> table, std::span<const std::int32_t> ids);
template <class T> Var<T> gather_rows(Var<T> a, std::span<const std::size_t> rows);
template <class T> Var<T> concat_rows(std::span<const Var<T>> parts);
template <class T> Var<T> sum(Var<T> a);

template <class T>
struct DropoutResult {
  Var<T> output;
  Tensor<T> mask;
};

/// Inverted dropout: y = x * mask / (1 - rate). Rate 0 returns x itself.
template <class T> DropoutResult<T> dropout(Var<T> x, double rate, RngStream& rng);
/// Replays a recorded mask.
template <class T> Var<T> dropout_replay(Var<T> x, const Tensor<T>& mask, double rate);

struct AttentionShape {
  std::size_t batch = 0;
  std::size_t query_len = 0;
  std::size_t key_len = 0;
  std::size_t heads = 1;
  bool causal = false;
  // [batch x key_len], 1 marks a padded key. Empty means no padding.
  std::span<const std::uint8_t> key_padding;
};

/// Multi-head scaled dot-product attention. q is [batch*query_len x d],
/// k and v are [batch*key_len x d]; heads split d into equal slices.
template <class T> Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const AttentionShape& shape);

/// Mean negative log-likelihood of `targets` over rows where `score_mask` is
/// set. Returns 0 with no scored rows. Unscored rows receive no gradient.
template <class T>
Var<T> masked_cross_entropy(Var<T> logits, std::span<const std::int32_t> targets,
                            std::span<const std::uint8_t> score_mask);

template <class T> Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <class T> Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <class T> Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }
template <class T> Var<T> operator*(Var<T> a, double f) { return scale(a, static_cast<T>(f)); }
template <class T> Var<T> operator*(double f, Var<T> a) { return scale(a, static_cast<T>(f)); }

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace mmtlab::ad
