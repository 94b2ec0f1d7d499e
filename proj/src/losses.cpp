// SPDX-License-Identifier: Apache-2.0
#include "mmtlab/losses.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "mmtlab/error.hpp"

namespace mmtlab {

namespace {

struct Preset {
  std::string_view name;
  LossToggles toggles;
};

// Rows follow the loss-term ablation table: 1 plain translation, 2 with ID,
// 3 decoder denoising (MMT+DAE), 6 concurrent denoising, 8 everything.
constexpr LossToggles kRows[8] = {
    {true, false, false, false, false, false},  // 1
    {true, false, false, true, false, false},   // 2
    {true, false, true, false, false, false},   // 3
    {true, false, true, false, false, true},    // 4
    {true, false, true, true, false, true},     // 5
    {true, true, true, false, false, false},    // 6
    {true, true, true, false, true, true},      // 7
    {true, true, true, true, true, true},       // 8
};

}  // namespace

LossToggles LossToggles::preset(std::string_view name) {
  if (name == "regular") return kRows[0];
  if (name == "id") return kRows[1];
  if (name == "dae") return kRows[2];
  if (name == "cd") return kRows[5];
  if (name == "cd_id") return kRows[7];
  if (name.size() == 4 && name.starts_with("row") && name[3] >= '1' && name[3] <= '8') {
    return kRows[name[3] - '1'];
  }
  throw UsageError(fmt::format("unknown loss preset '{}'", name));
}

std::vector<std::string> LossToggles::preset_names() {
  return {"regular", "id", "dae", "cd", "cd_id", "row1", "row2", "row3", "row4", "row5", "row6", "row7", "row8"};
}

void LossToggles::validate() const {
  if (id_mmt && !mmt) throw InvalidArgument("loss toggles: id_mmt requires mmt");
  if (id_e && !e) throw InvalidArgument("loss toggles: id_e requires e");
  if (id_d && !d) throw InvalidArgument("loss toggles: id_d requires d");
}

nlohmann::json LossToggles::to_json() const {
  return {{"mmt", mmt}, {"e", e}, {"d", d}, {"id_mmt", id_mmt}, {"id_e", id_e}, {"id_d", id_d}};
}

LossToggles LossToggles::from_json(const nlohmann::json& j) {
  if (j.is_string()) return preset(j.get<std::string>());
  LossToggles t;
  t.mmt = j.value("mmt", t.mmt);
  t.e = j.value("e", t.e);
  t.d = j.value("d", t.d);
  t.id_mmt = j.value("id_mmt", t.id_mmt);
  t.id_e = j.value("id_e", t.id_e);
  t.id_d = j.value("id_d", t.id_d);
  return t;
}

LossBundle compose_total(const LossBundle& terms, const LossToggles& toggles, double alpha) {
  toggles.validate();
  if (!(alpha >= 0.0)) throw InvalidArgument("compose_total: alpha must be non-negative");
  LossBundle out;
  out.l_mmt = toggles.mmt ? terms.l_mmt : 0.0;
  out.l_e = toggles.e ? terms.l_e : 0.0;
  out.l_d = toggles.d ? terms.l_d : 0.0;
  out.l_id_mmt = toggles.id_mmt ? terms.l_id_mmt : 0.0;
  out.l_id_e = toggles.id_e ? terms.l_id_e : 0.0;
  out.l_id_d = toggles.id_d ? terms.l_id_d : 0.0;
  out.total = out.l_mmt + out.l_e + out.l_d + alpha * (out.l_id_mmt + out.l_id_e + out.l_id_d);
  return out;
}

namespace {

std::size_t positions_of(std::size_t values, std::size_t& support) {
  if (support == 0) support = values;
  if (support == 0 || values % support != 0) throw ShapeError("divergence: size is not a multiple of the support");
  return values / support;
}

void check_normalized(std::span<const double> p, std::size_t support) {
  for (std::size_t r = 0; r * support < p.size(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < support; ++c) {
      const double v = p[r * support + c];
      if (!(v >= 0.0)) throw InvalidArgument("divergence: negative or NaN probability");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-4) throw InvalidArgument(fmt::format("divergence: row {} sums to {}", r, s));
  }
}

}  // namespace

double kl_divergence(std::span<const double> p, std::span<const double> q, std::size_t support, double floor) {
  if (p.size() != q.size()) throw ShapeError("kl_divergence: size mismatch");
  const std::size_t n = positions_of(p.size(), support);
  check_normalized(p, support);
  check_normalized(q, support);
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = std::max(p[i], floor);
    const double b = std::max(q[i], floor);
    total += p[i] * (std::log(a) - std::log(b));
  }
  return total / static_cast<double>(n);
}

double x_divergence(const std::vector<std::vector<double>>& dists, std::size_t support, double floor) {
  if (dists.size() < 2) throw InvalidArgument("x_divergence: need at least 2 distributions");
  const std::size_t size = dists.front().size();
  for (const auto& d : dists) {
    if (d.size() != size) throw ShapeError("x_divergence: size mismatch");
  }
  std::vector<double> mean(size, 0.0);
  for (const auto& d : dists) {
    for (std::size_t i = 0; i < size; ++i) mean[i] += d[i];
  }
  for (auto& v : mean) v /= static_cast<double>(dists.size());
  double total = 0.0;
  for (const auto& d : dists) total += kl_divergence(d, mean, support, floor) + kl_divergence(mean, d, support, floor);
  return total / static_cast<double>(dists.size());
}

namespace ad {

template <class T>
Var<T> x_divergence(std::span<const Var<T>> logits, std::span<const std::uint8_t> score_mask, T floor) {
  if (logits.size() < 2) throw InvalidArgument("x_divergence: need at least 2 passes");
  Tape<T>& tape = *logits.front().tape;
  const std::size_t rows = logits.front().rows();
  if (score_mask.size() != rows) throw ShapeError("x_divergence: score mask does not match logits rows");
  std::vector<std::size_t> scored;
  for (std::size_t r = 0; r < rows; ++r) {
    if (score_mask[r]) scored.push_back(r);
  }
  if (scored.empty()) return tape.constant(Tensor<T>::scalar(T(0)));

  const T inv_k = T(1) / static_cast<T>(logits.size());
  std::vector<Var<T>> probs;
  for (const auto& l : logits) {
    if (l.rows() != rows || l.cols() != logits.front().cols()) throw ShapeError("x_divergence: pass shapes differ");
    probs.push_back(gather_rows(softmax(l), std::span<const std::size_t>(scored)));
  }
  Var<T> mean = probs.front();
  for (std::size_t k = 1; k < probs.size(); ++k) mean = mean + probs[k];
  mean = scale(mean, inv_k);
  const Var<T> log_mean = log_clamped(mean, floor);
  // KL(p||m) + KL(m||p) = sum (p - m)(log p - log m)
  Var<T> total;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    Var<T> term = sum((probs[k] - mean) * (log_clamped(probs[k], floor) - log_mean));
    total = k == 0 ? term : total + term;
  }
  return scale(total, inv_k / static_cast<T>(scored.size()));
}

template Var<float> x_divergence(std::span<const Var<float>>, std::span<const std::uint8_t>, float);
template Var<double> x_divergence(std::span<const Var<double>>, std::span<const std::uint8_t>, double);

}  // namespace ad

}  // namespace mmtlab
