// SPDX-License-Identifier: Apache-2.0
#include "mmtlab/model.hpp"

#include <cmath>

#include <fmt/format.h>

#include "mmtlab/error.hpp"

namespace mmtlab {

void ModelConfig::validate() const {
  if (layers == 0) throw InvalidArgument("ModelConfig: layers must be positive");
  if (heads == 0 || model_dim == 0 || model_dim % heads != 0) {
    throw InvalidArgument(fmt::format("ModelConfig: model_dim {} not divisible by heads {}", model_dim, heads));
  }
  if (ffn_dim == 0) throw InvalidArgument("ModelConfig: ffn_dim must be positive");
  if (vocab_size <= Vocabulary::kFixedSpecials) throw InvalidArgument("ModelConfig: vocab_size must cover the special tokens");
  if (max_positions == 0) throw InvalidArgument("ModelConfig: max_positions must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw InvalidArgument("ModelConfig: dropout_rate outside [0, 1)");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"layers", layers},
          {"heads", heads},
          {"model_dim", model_dim},
          {"ffn_dim", ffn_dim},
          {"vocab_size", vocab_size},
          {"max_positions", max_positions},
          {"dropout_rate", dropout_rate},
          {"share_projection", share_projection},
          {"cross_attention_in_denoising", cross_attention_in_denoising}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.model_dim = j.value("model_dim", c.model_dim);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_positions = j.value("max_positions", c.max_positions);
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  c.share_projection = j.value("share_projection", c.share_projection);
  c.cross_attention_in_denoising = j.value("cross_attention_in_denoising", c.cross_attention_in_denoising);
  return c;
}

namespace {

template <class T>
Tensor<T> xavier(std::size_t in, std::size_t out, RngStream& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor<T> t = Tensor<T>::matrix(in, out);
  for (auto& v : t.values()) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * a);
  return t;
}

template <class T>
Tensor<T> gaussian(std::size_t rows, std::size_t cols, double stddev, RngStream& rng) {
  Tensor<T> t = Tensor<T>::matrix(rows, cols);
  for (auto& v : t.values()) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

template <class T>
Tensor<T> vec(std::size_t n, T fill) {
  return Tensor<T>(Shape{n}, fill);
}

std::vector<std::int32_t> position_ids(std::size_t rows, std::size_t len) {
  std::vector<std::int32_t> ids(rows * len);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t < len; ++t) ids[r * len + t] = static_cast<std::int32_t>(t);
  }
  return ids;
}

}  // namespace

template <class T>
struct Transformer<T>::Context {
  ad::Tape<T>& tape;
  Bound p;
  RngStream* rng;
  double rate;
  DropoutRecord record;

  ad::Var<T> drop(ad::Var<T> x) {
    if (rng == nullptr || rate == 0.0) return x;
    ++record.draws;
    return ad::dropout(x, rate, *rng).output;
  }
  ad::Var<T> norm(ad::Var<T> x, const Norm& n) const { return ad::layer_norm(x, p[n.gamma], p[n.beta]); }
  ad::Var<T> linear(ad::Var<T> x, std::size_t w, std::size_t b) const {
    return ad::add_bias(ad::matmul(x, p[w]), p[b]);
  }
};

template <class T>
Transformer<T>::Transformer(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  RngStream rng(seed, make_stream_id(StreamPurpose::init, 0));
  const std::size_t d = config_.model_dim;
  const std::size_t v = config_.vocab_size;
  const double embed_std = 1.0 / std::sqrt(static_cast<double>(d));

  Tensor<T> tok = gaussian<T>(v, d, embed_std, rng);
  for (std::size_t c = 0; c < d; ++c) tok.at(static_cast<std::size_t>(Vocabulary::kPad), c) = T(0);
  tokens_ = store_.add("embed.tokens", std::move(tok));
  enc_pos_ = store_.add("embed.enc_positions", gaussian<T>(config_.max_positions, d, embed_std, rng));
  dec_pos_ = store_.add("embed.dec_positions", gaussian<T>(config_.max_positions, d, embed_std, rng));

  auto norm = [&](const std::string& prefix) {
    return Norm{store_.add(prefix + ".gamma", vec<T>(d, T(1))), store_.add(prefix + ".beta", vec<T>(d, T(0)))};
  };
  auto attention = [&](const std::string& prefix) {
    Attention a{};
    a.q_w = store_.add(prefix + ".q.weight", xavier<T>(d, d, rng));
    a.q_b = store_.add(prefix + ".q.bias", vec<T>(d, T(0)));
    a.k_w = store_.add(prefix + ".k.weight", xavier<T>(d, d, rng));
    a.k_b = store_.add(prefix + ".k.bias", vec<T>(d, T(0)));
    a.v_w = store_.add(prefix + ".v.weight", xavier<T>(d, d, rng));
    a.v_b = store_.add(prefix + ".v.bias", vec<T>(d, T(0)));
    a.o_w = store_.add(prefix + ".out.weight", xavier<T>(d, d, rng));
    a.o_b = store_.add(prefix + ".out.bias", vec<T>(d, T(0)));
    return a;
  };
  auto ffn = [&](const std::string& prefix) {
    Ffn f{};
    f.w1 = store_.add(prefix + ".fc1.weight", xavier<T>(d, config_.ffn_dim, rng));
    f.b1 = store_.add(prefix + ".fc1.bias", vec<T>(config_.ffn_dim, T(0)));
    f.w2 = store_.add(prefix + ".fc2.weight", xavier<T>(config_.ffn_dim, d, rng));
    f.b2 = store_.add(prefix + ".fc2.bias", vec<T>(d, T(0)));
    return f;
  };

  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string pre = fmt::format("enc.{}", l);
    EncoderLayer layer{};
    layer.ln_attn = norm(pre + ".self_attn_norm");
    layer.attn = attention(pre + ".self_attn");
    layer.ln_ffn = norm(pre + ".ffn_norm");
    layer.ffn = ffn(pre + ".ffn");
    encoder_.push_back(layer);
  }
  enc_final_ = norm("enc.final_norm");
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string pre = fmt::format("dec.{}", l);
    DecoderLayer layer{};
    layer.ln_self = norm(pre + ".self_attn_norm");
    layer.self_attn = attention(pre + ".self_attn");
    layer.ln_cross = norm(pre + ".cross_attn_norm");
    layer.cross_attn = attention(pre + ".cross_attn");
    layer.ln_ffn = norm(pre + ".ffn_norm");
    layer.ffn = ffn(pre + ".ffn");
    decoder_.push_back(layer);
  }
  dec_final_ = norm("dec.final_norm");
  proj_decoder_ = store_.add("proj.decoder.weight", gaussian<T>(d, v, embed_std, rng));
  proj_encoder_ = config_.share_projection ? proj_decoder_
                                           : store_.add("proj.encoder.weight", gaussian<T>(d, v, embed_std, rng));
}

template <class T>
ad::Var<T> Transformer<T>::embed(Context& ctx, std::span<const TokenId> tokens, std::size_t rows, std::size_t len,
                                 std::size_t positions) const {
  if (len > config_.max_positions) {
    throw InvalidArgument(fmt::format("sequence length {} exceeds max_positions {}", len, config_.max_positions));
  }
  const auto pos = position_ids(rows, len);
  auto x = ad::scale(ad::embedding(ctx.p[tokens_], tokens), static_cast<T>(std::sqrt(config_.model_dim)));
  x = x + ad::embedding(ctx.p[positions], std::span<const std::int32_t>(pos));
  return ctx.drop(x);
}

template <class T>
ad::Var<T> Transformer<T>::attend(Context& ctx, const Attention& a, ad::Var<T> query_in, ad::Var<T> key_in,
                                  const ad::AttentionShape& shape) const {
  auto q = ctx.linear(query_in, a.q_w, a.q_b);
  auto k = ctx.linear(key_in, a.k_w, a.k_b);
  auto v = ctx.linear(key_in, a.v_w, a.v_b);
  return ctx.linear(ad::attention(q, k, v, shape), a.o_w, a.o_b);
}

template <class T>
ad::Var<T> Transformer<T>::feed_forward(Context& ctx, const Ffn& f, ad::Var<T> x) const {
  return ctx.linear(ad::relu(ctx.linear(x, f.w1, f.b1)), f.w2, f.b2);
}

template <class T>
ad::Var<T> Transformer<T>::encode(Context& ctx, std::span<const TokenId> tokens, std::span<const std::uint8_t> pad,
                                  std::size_t rows, std::size_t len) const {
  auto x = embed(ctx, tokens, rows, len, enc_pos_);
  ad::AttentionShape shape{rows, len, len, config_.heads, false, pad};
  for (const auto& layer : encoder_) {
    auto h = ctx.norm(x, layer.ln_attn);
    x = x + ctx.drop(attend(ctx, layer.attn, h, h, shape));
    x = x + ctx.drop(feed_forward(ctx, layer.ffn, ctx.norm(x, layer.ln_ffn)));
  }
  return ctx.norm(x, enc_final_);
}

template <class T>
ad::Var<T> Transformer<T>::decode(Context& ctx, std::span<const TokenId> tokens, std::span<const std::uint8_t> pad,
                                  std::size_t rows, std::size_t len, std::optional<ad::Var<T>> memory,
                                  std::span<const std::uint8_t> memory_pad, std::size_t memory_len) const {
  auto x = embed(ctx, tokens, rows, len, dec_pos_);
  ad::AttentionShape self{rows, len, len, config_.heads, true, pad};
  ad::AttentionShape cross{rows, len, memory_len, config_.heads, false, memory_pad};
  for (const auto& layer : decoder_) {
    auto h = ctx.norm(x, layer.ln_self);
    x = x + ctx.drop(attend(ctx, layer.self_attn, h, h, self));
    if (memory) x = x + ctx.drop(attend(ctx, layer.cross_attn, ctx.norm(x, layer.ln_cross), *memory, cross));
    x = x + ctx.drop(feed_forward(ctx, layer.ffn, ctx.norm(x, layer.ln_ffn)));
  }
  return ctx.norm(x, dec_final_);
}

template <class T>
ForwardOutput<T> Transformer<T>::forward_mmt(ad::Tape<T>& tape, Bound params, const Batch& batch,
                                             RngStream* pass_rng) const {
  if (batch.task != Task::translation) throw InvalidArgument("forward_mmt: batch is not a translation batch");
  if (params.size() != store_.entry_count()) throw InvalidArgument("forward_mmt: parameters not bound to this model");
  Context ctx{tape, params, pass_rng, config_.dropout_rate, {}};
  if (pass_rng) ctx.record = {pass_rng->seed(), pass_rng->stream_id(), 0};
  auto memory = encode(ctx, batch.encoder_tokens, batch.encoder_pad, batch.rows, batch.src_len);
  auto states = decode(ctx, batch.decoder_input, batch.decoder_pad, batch.rows, batch.tgt_len, memory,
                       batch.encoder_pad, batch.src_len);
  ForwardOutput<T> out{ad::matmul(states, params[proj_decoder_]), std::nullopt, {}};
  out.dropout = ctx.record;
  return out;
}

template <class T>
ForwardOutput<T> Transformer<T>::forward_cd(ad::Tape<T>& tape, Bound params, const Batch& batch,
                                            RngStream* pass_rng) const {
  if (batch.task != Task::denoising) throw InvalidArgument("forward_cd: batch is not a denoising batch");
  if (params.size() != store_.entry_count()) throw InvalidArgument("forward_cd: parameters not bound to this model");
  Context ctx{tape, params, pass_rng, config_.dropout_rate, {}};
  if (pass_rng) ctx.record = {pass_rng->seed(), pass_rng->stream_id(), 0};
  auto memory = encode(ctx, batch.encoder_tokens, batch.encoder_pad, batch.rows, batch.src_len);
  std::optional<ad::Var<T>> cross;
  if (config_.cross_attention_in_denoising) cross = memory;
  auto states = decode(ctx, batch.decoder_input, batch.decoder_pad, batch.rows, batch.tgt_len, cross,
                       batch.encoder_pad, batch.src_len);
  ForwardOutput<T> out{ad::matmul(states, params[proj_decoder_]), ad::matmul(memory, params[proj_encoder_]), {}};
  out.dropout = ctx.record;
  return out;
}

template <class T>
DecodeSession<T>::DecodeSession(const Transformer<T>& model, std::span<const TokenId> encoder_input)
    : model_(&model), tape_(false), src_len_(encoder_input.size()) {
  if (encoder_input.empty()) throw InvalidArgument("DecodeSession: empty source");
  const auto& store = model.parameters();
  for (std::size_t i = 0; i < store.entry_count(); ++i) {
    const auto& e = store.entry(i);
    Tensor<T> snapshot = e.value;
    for (std::size_t j = 0; j < snapshot.size(); ++j) {
      if (!e.keep[j]) snapshot[j] = T(0);
    }
    params_.push_back(tape_.constant(std::move(snapshot)));
  }
  typename Transformer<T>::Context ctx{tape_, params_, nullptr, 0.0, {}};
  memory_ = model.encode(ctx, encoder_input, {}, 1, src_len_);
}

template <class T>
std::vector<std::vector<double>> DecodeSession<T>::next_log_probs(const std::vector<std::vector<TokenId>>& prefixes) {
  if (prefixes.empty()) return {};
  const std::size_t len = prefixes.front().size();
  if (len == 0) throw InvalidArgument("DecodeSession: empty prefix");
  std::vector<TokenId> tokens;
  tokens.reserve(prefixes.size() * len);
  for (const auto& p : prefixes) {
    if (p.size() != len) throw InvalidArgument("DecodeSession: prefixes must share one length");
    tokens.insert(tokens.end(), p.begin(), p.end());
  }
  const std::size_t rows = prefixes.size();
  std::vector<std::size_t> repeat(rows * src_len_);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t < src_len_; ++t) repeat[r * src_len_ + t] = t;
  }
  typename Transformer<T>::Context ctx{tape_, params_, nullptr, 0.0, {}};
  auto memory = ad::gather_rows(memory_, std::span<const std::size_t>(repeat));
  // Only the last position of each prefix matters.
  auto states = model_->decode(ctx, tokens, {}, rows, len, memory, {}, src_len_);
  std::vector<std::size_t> last(rows);
  for (std::size_t r = 0; r < rows; ++r) last[r] = r * len + len - 1;
  auto logits = ad::matmul(ad::gather_rows(states, std::span<const std::size_t>(last)),
                           params_[model_->proj_decoder_]);
  const auto& lp = ad::log_softmax(logits).value();
  std::vector<std::vector<double>> out(rows, std::vector<double>(lp.cols()));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < lp.cols(); ++c) out[r][c] = static_cast<double>(lp.at(r, c));
  }
  return out;
}

template class Transformer<float>;
template class Transformer<double>;
template class DecodeSession<float>;
template class DecodeSession<double>;

}  // namespace mmtlab
