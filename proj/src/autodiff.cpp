// SPDX-License-Identifier: Apache-2.0
#include "mmtlab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>
#include <fmt/format.h>

namespace mmtlab::ad {

namespace {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <class T>
using MutMap = Eigen::Map<RowMatrix<T>>;

template <class T>
void require_rank2(const Tensor<T>& t, std::string_view op) {
  if (t.rank() != 2) throw ShapeError(fmt::format("{}: expected rank-2 tensor, got {}", op, shape_string(t.shape())));
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op, shape_string(a.shape()), shape_string(b.shape())));
  }
}

}  // namespace

// ---- Tape -------------------------------------------------------------------

template <class T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  return record("constant", std::move(value), std::span<const Var<T>>{}, nullptr);
}

template <class T>
Var<T> Tape<T>::leaf(Tensor<T> value) {
  Var<T> v = record("leaf", std::move(value), std::span<const Var<T>>{}, nullptr);
  nodes_[v.id].needs_grad = recording_;
  return v;
}

template <class T>
std::vector<Var<T>> Tape<T>::bind(ParameterStore<T>& store) {
  std::vector<Var<T>> out;
  out.reserve(store.entry_count());
  for (std::size_t i = 0; i < store.entry_count(); ++i) {
    const auto& e = store.entry(i);
    Tensor<T> snapshot = e.value;
    for (std::size_t j = 0; j < snapshot.size(); ++j) {
      if (!e.keep[j]) snapshot[j] = T(0);
    }
    Var<T> v = leaf(std::move(snapshot));
    if (recording_) bindings_.push_back({v.id, &store, i});
    out.push_back(v);
  }
  return out;
}

template <class T>
Var<T> Tape<T>::record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> parents,
                       BackwardFn backward) {
  return record(op, std::move(value), std::span<const Var<T>>(parents.begin(), parents.size()),
                std::move(backward));
}

template <class T>
Var<T> Tape<T>::record(std::string_view op, Tensor<T> value, std::span<const Var<T>> parents,
                       BackwardFn backward) {
  if (!value.all_finite()) throw NumericError(fmt::format("op '{}' produced a non-finite value", op));
  Node node;
  node.value = std::move(value);
  node.op = op;
  if (recording_) {
    for (const auto& p : parents) {
      if (p.tape != this) throw InvalidArgument(fmt::format("op '{}': operand from another tape", op));
      node.needs_grad = node.needs_grad || nodes_[p.id].needs_grad;
    }
    if (node.needs_grad) node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var<T>{this, nodes_.size() - 1};
}

template <class T>
std::span<T> Tape<T>::grad(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
  return n.grad;
}

template <class T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape != this) throw InvalidArgument("backward: loss belongs to another tape");
  if (value(loss.id).size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_string(value(loss.id).shape()));
  }
  for (auto& n : nodes_) n.grad.clear();
  if (!nodes_[loss.id].needs_grad) return;
  grad(loss.id)[0] = T(1);
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) continue;
    for (const T g : n.grad) {
      if (!std::isfinite(g)) throw NumericError(fmt::format("backward: non-finite gradient at op '{}'", n.op));
    }
    if (n.backward) n.backward(*this, id);
  }
  for (const auto& b : bindings_) {
    const auto& g = nodes_[b.node].grad;
    if (!g.empty()) b.store->accumulate_grad(b.entry, g);
  }
}

// ---- elementwise ------------------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  const auto& x = a.value();
  const auto& y = b.value();
  require_same_shape(x, y, "add");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return a.tape->record("add", std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    for (Var<T> p : {a, b}) {
      if (!t.needs_grad(p.id)) continue;
      auto gp = t.grad(p.id);
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
    }
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  const auto& x = a.value();
  const auto& y = b.value();
  require_same_shape(x, y, "sub");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return a.tape->record("sub", std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    if (t.needs_grad(a.id)) {
      auto ga = t.grad(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(b.id)) {
      auto gb = t.grad(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  const auto& x = a.value();
  const auto& y = b.value();
  require_same_shape(x, y, "mul");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return a.tape->record("mul", std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    const auto& x = t.value(a.id);
    const auto& y = t.value(b.id);
    if (t.needs_grad(a.id)) {
      auto ga = t.grad(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (t.needs_grad(b.id)) {
      auto gb = t.grad(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T factor) {
  const auto& x = a.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return a.tape->record("scale", std::move(out), {a}, [a, factor](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

template <class T>
Var<T> add_bias(Var<T> a, Var<T> bias) {
  const auto& x = a.value();
  const auto& b = bias.value();
  require_rank2(x, "add_bias");
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  if (b.size() != cols) throw ShapeError(fmt::format("add_bias: bias of {} for {} columns", b.size(), cols));
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] + b[c];
  }
  return a.tape->record("add_bias", std::move(out), {a, bias},
                        [a, bias, rows, cols](Tape<T>& t, std::size_t self) {
                          auto g = t.grad(self);
                          if (t.needs_grad(a.id)) {
                            auto ga = t.grad(a.id);
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                          }
                          if (t.needs_grad(bias.id)) {
                            auto gb = t.grad(bias.id);
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                            }
                          }
                        });
}

template <class T>
Var<T> relu(Var<T> a) {
  const auto& x = a.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return a.tape->record("relu", std::move(out), {a}, [a](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    const auto& x = t.value(a.id);
    auto ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > T(0)) ga[i] += g[i];
    }
  });
}

template <class T>
Var<T> log_clamped(Var<T> a, T floor) {
  const auto& x = a.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(x[i], floor));
  return a.tape->record("log_clamped", std::move(out), {a}, [a, floor](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    const auto& x = t.value(a.id);
    auto ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > floor) ga[i] += g[i] / x[i];
    }
  });
}

template <class T>
Var<T> sum(Var<T> a) {
  T total = T(0);
  for (const T v : a.value().values()) total += v;
  return a.tape->record("sum", Tensor<T>::scalar(total), {a}, [a](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    for (T& v : t.grad(a.id)) v += g;
  });
}

// ---- linear algebra ---------------------------------------------------------

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& x = a.value();
  const auto& y = b.value();
  require_rank2(x, "matmul");
  require_rank2(y, "matmul");
  const auto m = static_cast<Eigen::Index>(x.rows());
  const auto k = static_cast<Eigen::Index>(x.cols());
  const auto n = static_cast<Eigen::Index>(y.cols());
  if (static_cast<Eigen::Index>(y.rows()) != k) {
    throw ShapeError(fmt::format("matmul: {} x {}", shape_string(x.shape()), shape_string(y.shape())));
  }
  Tensor<T> out = Tensor<T>::matrix(x.rows(), y.cols());
  MutMap<T>(out.data(), m, n).noalias() = ConstMap<T>(x.data(), m, k) * ConstMap<T>(y.data(), k, n);
  return a.tape->record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& t, std::size_t self) {
    ConstMap<T> g(t.grad(self).data(), m, n);
    if (t.needs_grad(a.id)) {
      MutMap<T>(t.grad(a.id).data(), m, k).noalias() += g * ConstMap<T>(t.value(b.id).data(), k, n).transpose();
    }
    if (t.needs_grad(b.id)) {
      MutMap<T>(t.grad(b.id).data(), k, n).noalias() += ConstMap<T>(t.value(a.id).data(), m, k).transpose() * g;
    }
  });
}

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  const auto& in = x.value();
  require_rank2(in, "layer_norm");
  const std::size_t rows = in.rows();
  const std::size_t d = in.cols();
  if (gamma.value().size() != d || beta.value().size() != d) throw ShapeError("layer_norm: affine size mismatch");
  const auto& g = gamma.value();
  const auto& b = beta.value();
  Tensor<T> out(in.shape());
  std::vector<T> xhat(in.size());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * d;
    T mean = T(0);
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<T>(d);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (row[c] - mean) * inv_std[r];
      out[r * d + c] = xhat[r * d + c] * g[c] + b[c];
    }
  }
  return x.tape->record(
      "layer_norm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t, std::size_t self) {
        auto gy = t.grad(self);
        const auto& gam = t.value(gamma.id);
        if (t.needs_grad(gamma.id)) {
          auto gg = t.grad(gamma.id);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) gg[c] += gy[r * d + c] * xhat[r * d + c];
        }
        if (t.needs_grad(beta.id)) {
          auto gb = t.grad(beta.id);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) gb[c] += gy[r * d + c];
        }
        if (t.needs_grad(x.id)) {
          auto gx = t.grad(x.id);
          const T inv_d = T(1) / static_cast<T>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            T sum_dxhat = T(0);
            T sum_dxhat_xhat = T(0);
            for (std::size_t c = 0; c < d; ++c) {
              const T dxhat = gy[r * d + c] * gam[c];
              sum_dxhat += dxhat;
              sum_dxhat_xhat += dxhat * xhat[r * d + c];
            }
            for (std::size_t c = 0; c < d; ++c) {
              const T dxhat = gy[r * d + c] * gam[c];
              gx[r * d + c] += inv_std[r] * inv_d *
                               (static_cast<T>(d) * dxhat - sum_dxhat - xhat[r * d + c] * sum_dxhat_xhat);
            }
          }
        }
      });
}

template <class T>
Var<T> softmax(Var<T> a) {
  const auto& x = a.value();
  const std::size_t cols = x.rank() == 0 ? 1 : x.shape().back();
  const std::size_t rows = x.size() / cols;
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data() + r * cols;
    T* o = out.data() + r * cols;
    const T mx = *std::max_element(in, in + cols);
    T z = T(0);
    for (std::size_t c = 0; c < cols; ++c) z += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
  }
  return a.tape->record("softmax", std::move(out), {a}, [a, rows, cols](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    const auto& p = t.value(self);
    auto ga = t.grad(a.id);
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = T(0);
      for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * p[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += p[r * cols + c] * (g[r * cols + c] - dot);
    }
  });
}

template <class T>
Var<T> log_softmax(Var<T> a) {
  const auto& x = a.value();
  const std::size_t cols = x.rank() == 0 ? 1 : x.shape().back();
  const std::size_t rows = x.size() / cols;
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data() + r * cols;
    T* o = out.data() + r * cols;
    const T mx = *std::max_element(in, in + cols);
    T z = T(0);
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(in[c] - mx);
    const T lz = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) o[c] = in[c] - lz;
  }
  return a.tape->record("log_softmax", std::move(out), {a}, [a, rows, cols](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    const auto& lp = t.value(self);
    auto ga = t.grad(a.id);
    for (std::size_t r = 0; r < rows; ++r) {
      T gsum = T(0);
      for (std::size_t c = 0; c < cols; ++c) gsum += g[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[r * cols + c] - std::exp(lp[r * cols + c]) * gsum;
    }
  });
}

// ---- indexing ---------------------------------------------------------------

template <class T>
Var<T> embedding(Var<T> table, std::span<const std::int32_t> ids) {
  const auto& w = table.value();
  require_rank2(w, "embedding");
  const std::size_t d = w.cols();
  Tensor<T> out = Tensor<T>::matrix(ids.size(), d);
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  for (std::size_t r = 0; r < idv.size(); ++r) {
    if (idv[r] < 0 || static_cast<std::size_t>(idv[r]) >= w.rows()) {
      throw InvalidArgument(fmt::format("embedding: id {} outside table of {} rows", idv[r], w.rows()));
    }
    std::copy_n(w.data() + static_cast<std::size_t>(idv[r]) * d, d, out.data() + r * d);
  }
  return table.tape->record("embedding", std::move(out), {table},
                            [table, d, idv = std::move(idv)](Tape<T>& t, std::size_t self) {
                              auto g = t.grad(self);
                              auto gw = t.grad(table.id);
                              for (std::size_t r = 0; r < idv.size(); ++r) {
                                T* dst = gw.data() + static_cast<std::size_t>(idv[r]) * d;
                                for (std::size_t c = 0; c < d; ++c) dst[c] += g[r * d + c];
                              }
                            });
}

template <class T>
Var<T> gather_rows(Var<T> a, std::span<const std::size_t> rows) {
  const auto& x = a.value();
  require_rank2(x, "gather_rows");
  const std::size_t d = x.cols();
  Tensor<T> out = Tensor<T>::matrix(rows.size(), d);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= x.rows()) throw InvalidArgument("gather_rows: row index out of range");
    std::copy_n(x.data() + idx[r] * d, d, out.data() + r * d);
  }
  return a.tape->record("gather_rows", std::move(out), {a}, [a, d, idx = std::move(idx)](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(a.id);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t c = 0; c < d; ++c) ga[idx[r] * d + c] += g[r * d + c];
    }
  });
}

template <class T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw InvalidArgument("concat_rows: no operands");
  const std::size_t d = parts.front().value().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_rank2(p.value(), "concat_rows");
    if (p.value().cols() != d) throw ShapeError("concat_rows: column mismatch");
    rows += p.value().rows();
  }
  Tensor<T> out = Tensor<T>::matrix(rows, d);
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.data() + at);
    at += p.value().size();
  }
  std::vector<Var<T>> ps(parts.begin(), parts.end());
  return parts.front().tape->record("concat_rows", std::move(out), parts, [ps](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    std::size_t at = 0;
    for (const auto& p : ps) {
      const std::size_t n = t.value(p.id).size();
      if (t.needs_grad(p.id)) {
        auto gp = t.grad(p.id);
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[at + i];
      }
      at += n;
    }
  });
}

// ---- dropout ----------------------------------------------------------------

template <class T>
Var<T> dropout_replay(Var<T> x, const Tensor<T>& mask, double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InvalidArgument(fmt::format("dropout: rate {} outside [0, 1)", rate));
  require_same_shape(x.value(), mask, "dropout");
  if (rate == 0.0) return x;
  const T inv_keep = static_cast<T>(1.0 / (1.0 - rate));
  const auto& in = x.value();
  Tensor<T> out(in.shape());
  std::vector<T> factor(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    factor[i] = mask[i] * inv_keep;
    out[i] = in[i] * factor[i];
  }
  return x.tape->record("dropout", std::move(out), {x}, [x, factor = std::move(factor)](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    auto gx = t.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor[i];
  });
}

template <class T>
DropoutResult<T> dropout(Var<T> x, double rate, RngStream& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InvalidArgument(fmt::format("dropout: rate {} outside [0, 1)", rate));
  Tensor<T> mask(x.value().shape(), T(1));
  if (rate == 0.0) return {x, std::move(mask)};
  for (auto& m : mask.values()) m = rng.uniform() < rate ? T(0) : T(1);
  Var<T> y = dropout_replay(x, mask, rate);
  return {y, std::move(mask)};
}

// ---- attention --------------------------------------------------------------

template <class T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const AttentionShape& shape) {
  const auto& Q = q.value();
  const auto& K = k.value();
  const auto& V = v.value();
  require_rank2(Q, "attention");
  require_rank2(K, "attention");
  require_same_shape(K, V, "attention");
  const std::size_t B = shape.batch;
  const std::size_t Tq = shape.query_len;
  const std::size_t Tk = shape.key_len;
  const std::size_t H = shape.heads;
  const std::size_t d = Q.cols();
  if (Q.rows() != B * Tq || K.rows() != B * Tk || K.cols() != d) throw ShapeError("attention: layout mismatch");
  if (H == 0 || d % H != 0) throw ShapeError("attention: model dim not divisible by heads");
  if (!shape.key_padding.empty() && shape.key_padding.size() != B * Tk) throw ShapeError("attention: padding mask size");
  const std::size_t dh = d / H;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));

  Tensor<T> out = Tensor<T>::matrix(B * Tq, d);
  std::vector<T> probs(B * H * Tq * Tk, T(0));
  std::vector<std::uint8_t> blocked(B * Tq * Tk, 0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < Tq; ++i) {
      for (std::size_t j = 0; j < Tk; ++j) {
        const bool pad = !shape.key_padding.empty() && shape.key_padding[b * Tk + j];
        blocked[(b * Tq + i) * Tk + j] = (shape.causal && j > i) || pad;
      }
    }
  }
  std::vector<T> scores(Tk);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < Tq; ++i) {
        const T* qi = Q.data() + (b * Tq + i) * d + h * dh;
        const std::uint8_t* blk = blocked.data() + (b * Tq + i) * Tk;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < Tk; ++j) {
          if (blk[j]) continue;
          const T* kj = K.data() + (b * Tk + j) * d + h * dh;
          T s = T(0);
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          scores[j] = s * inv_sqrt;
          mx = std::max(mx, scores[j]);
        }
        T* p = probs.data() + ((b * H + h) * Tq + i) * Tk;
        if (mx == -std::numeric_limits<T>::infinity()) continue;  // every key blocked
        T z = T(0);
        for (std::size_t j = 0; j < Tk; ++j) {
          if (!blk[j]) z += (p[j] = std::exp(scores[j] - mx));
        }
        T* o = out.data() + (b * Tq + i) * d + h * dh;
        for (std::size_t j = 0; j < Tk; ++j) {
          if (blk[j]) continue;
          p[j] /= z;
          const T* vj = V.data() + (b * Tk + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) o[c] += p[j] * vj[c];
        }
      }
    }
  }
  return q.tape->record(
      "attention", std::move(out), {q, k, v},
      [q, k, v, B, Tq, Tk, H, d, dh, inv_sqrt, probs = std::move(probs)](Tape<T>& t, std::size_t self) {
        auto g = t.grad(self);
        const auto& Qv = t.value(q.id);
        const auto& Kv = t.value(k.id);
        const auto& Vv = t.value(v.id);
        std::span<T> gq = t.needs_grad(q.id) ? t.grad(q.id) : std::span<T>{};
        std::span<T> gk = t.needs_grad(k.id) ? t.grad(k.id) : std::span<T>{};
        std::span<T> gv = t.needs_grad(v.id) ? t.grad(v.id) : std::span<T>{};
        std::vector<T> dp(Tk);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t i = 0; i < Tq; ++i) {
              const T* p = probs.data() + ((b * H + h) * Tq + i) * Tk;
              const T* go = g.data() + (b * Tq + i) * d + h * dh;
              T dot = T(0);
              for (std::size_t j = 0; j < Tk; ++j) {
                if (p[j] == T(0)) {
                  dp[j] = T(0);
                  continue;
                }
                const T* vj = Vv.data() + (b * Tk + j) * d + h * dh;
                T s = T(0);
                for (std::size_t c = 0; c < dh; ++c) s += go[c] * vj[c];
                dp[j] = s;
                dot += s * p[j];
                if (!gv.empty()) {
                  T* gvj = gv.data() + (b * Tk + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gvj[c] += p[j] * go[c];
                }
              }
              const T* qi = Qv.data() + (b * Tq + i) * d + h * dh;
              T* gqi = gq.empty() ? nullptr : gq.data() + (b * Tq + i) * d + h * dh;
              for (std::size_t j = 0; j < Tk; ++j) {
                if (p[j] == T(0)) continue;
                const T ds = p[j] * (dp[j] - dot) * inv_sqrt;
                const T* kj = Kv.data() + (b * Tk + j) * d + h * dh;
                if (gqi) {
                  for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
                }
                if (!gk.empty()) {
                  T* gkj = gk.data() + (b * Tk + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
}

// ---- losses -----------------------------------------------------------------

template <class T>
Var<T> masked_cross_entropy(Var<T> logits, std::span<const std::int32_t> targets,
                            std::span<const std::uint8_t> score_mask) {
  const auto& x = logits.value();
  require_rank2(x, "masked_cross_entropy");
  const std::size_t rows = x.rows();
  const std::size_t V = x.cols();
  if (targets.size() != rows || score_mask.size() != rows) {
    throw ShapeError(fmt::format("masked_cross_entropy: {} logit rows, {} targets, {} mask entries", rows,
                                 targets.size(), score_mask.size()));
  }
  std::vector<std::size_t> scored;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!score_mask[r]) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= V) {
      throw InvalidArgument(fmt::format("masked_cross_entropy: target {} outside vocabulary {}", targets[r], V));
    }
    scored.push_back(r);
  }
  if (scored.empty()) return logits.tape->constant(Tensor<T>::scalar(T(0)));

  std::vector<T> probs(scored.size() * V);
  std::vector<std::int32_t> tgt(scored.size());
  T nll = T(0);
  for (std::size_t s = 0; s < scored.size(); ++s) {
    const T* in = x.data() + scored[s] * V;
    T* p = probs.data() + s * V;
    const T mx = *std::max_element(in, in + V);
    T z = T(0);
    for (std::size_t c = 0; c < V; ++c) z += (p[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < V; ++c) p[c] /= z;
    tgt[s] = targets[scored[s]];
    nll -= in[static_cast<std::size_t>(tgt[s])] - mx - std::log(z);
  }
  const T inv_n = T(1) / static_cast<T>(scored.size());
  return logits.tape->record(
      "masked_cross_entropy", Tensor<T>::scalar(nll * inv_n), {logits},
      [logits, V, inv_n, scored = std::move(scored), probs = std::move(probs), tgt = std::move(tgt)](
          Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)[0] * inv_n;
        auto gl = t.grad(logits.id);
        for (std::size_t s = 0; s < scored.size(); ++s) {
          T* dst = gl.data() + scored[s] * V;
          const T* p = probs.data() + s * V;
          for (std::size_t c = 0; c < V; ++c) dst[c] += g * p[c];
          dst[static_cast<std::size_t>(tgt[s])] -= g;
        }
      });
}

// ---- instantiation ----------------------------------------------------------

template class Tape<float>;
template class Tape<double>;

#define MMTLAB_INSTANTIATE_OPS(T)                                                                     \
  template Var<T> matmul(Var<T>, Var<T>);                                                             \
  template Var<T> add(Var<T>, Var<T>);                                                                \
  template Var<T> sub(Var<T>, Var<T>);                                                                \
  template Var<T> mul(Var<T>, Var<T>);                                                                \
  template Var<T> scale(Var<T>, T);                                                                   \
  template Var<T> add_bias(Var<T>, Var<T>);                                                           \
  template Var<T> relu(Var<T>);                                                                       \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                              \
  template Var<T> softmax(Var<T>);                                                                    \
  template Var<T> log_softmax(Var<T>);                                                                \
  template Var<T> log_clamped(Var<T>, T);                                                             \
  template Var<T> embedding(Var<T>, std::span<const std::int32_t>);                                   \
  template Var<T> gather_rows(Var<T>, std::span<const std::size_t>);                                  \
  template Var<T> concat_rows(std::span<const Var<T>>);                                               \
  template Var<T> sum(Var<T>);                                                                        \
  template DropoutResult<T> dropout(Var<T>, double, RngStream&);                                      \
  template Var<T> dropout_replay(Var<T>, const Tensor<T>&, double);                                   \
  template Var<T> attention(Var<T>, Var<T>, Var<T>, const AttentionShape&);                           \
  template Var<T> masked_cross_entropy(Var<T>, std::span<const std::int32_t>, std::span<const std::uint8_t>);

MMTLAB_INSTANTIATE_OPS(float)
MMTLAB_INSTANTIATE_OPS(double)

#undef MMTLAB_INSTANTIATE_OPS

}  // namespace mmtlab::ad
