// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "mmtlab/autodiff.hpp"
#include "mmtlab/batch.hpp"
#include "mmtlab/parameter_store.hpp"
#include "mmtlab/rng.hpp"

namespace mmtlab {

struct ModelConfig {
  std::size_t layers = 2;  // per stack: encoder and decoder each
  std::size_t heads = 4;
  std::size_t model_dim = 128;
  std::size_t ffn_dim = 256;
  std::size_t vocab_size = 0;
  std::size_t max_positions = 64;
  double dropout_rate = 0.1;
  // One output projection serves the decoder head and the encoder denoising head.
  bool share_projection = true;
  // Decoder cross-attends to the encoder during denoising passes.
  bool cross_attention_in_denoising = true;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct DropoutRecord {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
  std::size_t draws = 0;  // number of dropout sites sampled
};

template <class T>
struct ForwardOutput {
  ad::Var<T> decoder_logits;                 // [rows*tgt_len x vocab]
  std::optional<ad::Var<T>> encoder_logits;  // [rows*src_len x vocab], denoising only
  DropoutRecord dropout;
};

/// Pre-norm transformer encoder-decoder with learned absolute positions.
/// Input token embeddings are shared by both stacks and are not tied to the
/// output projection.
template <class T>
class Transformer {
 public:
  using Bound = std::span<const ad::Var<T>>;

  Transformer(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }
  std::size_t parameter_count() const { return store_.element_count(); }

  /// Translation pass. Dropout draws come only from `pass_rng`; a null rng
  /// disables dropout.
  ForwardOutput<T> forward_mmt(ad::Tape<T>& tape, Bound params, const Batch& batch, RngStream* pass_rng) const;

  /// Concurrent-denoising pass: both encoder and decoder final states are
  /// scored against the shared target row.
  ForwardOutput<T> forward_cd(ad::Tape<T>& tape, Bound params, const Batch& batch, RngStream* pass_rng) const;

  std::size_t projection_entry() const { return proj_decoder_; }
  std::optional<std::size_t> encoder_projection_entry() const {
    return config_.share_projection ? std::nullopt : std::optional<std::size_t>(proj_encoder_);
  }

 private:
  template <class U>
  friend class DecodeSession;

  struct Norm {
    std::size_t gamma, beta;
  };
  struct Attention {
    std::size_t q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
  };
  struct Ffn {
    std::size_t w1, b1, w2, b2;
  };
  struct EncoderLayer {
    Norm ln_attn;
    Attention attn;
    Norm ln_ffn;
    Ffn ffn;
  };
  struct DecoderLayer {
    Norm ln_self;
    Attention self_attn;
    Norm ln_cross;
    Attention cross_attn;
    Norm ln_ffn;
    Ffn ffn;
  };
  struct Context;

  ad::Var<T> embed(Context& ctx, std::span<const TokenId> tokens, std::size_t rows, std::size_t len,
                   std::size_t positions) const;
  ad::Var<T> attend(Context& ctx, const Attention& a, ad::Var<T> query_in, ad::Var<T> key_in,
                    const ad::AttentionShape& shape) const;
  ad::Var<T> feed_forward(Context& ctx, const Ffn& f, ad::Var<T> x) const;
  ad::Var<T> encode(Context& ctx, std::span<const TokenId> tokens, std::span<const std::uint8_t> pad,
                    std::size_t rows, std::size_t len) const;
  ad::Var<T> decode(Context& ctx, std::span<const TokenId> tokens, std::span<const std::uint8_t> pad,
                    std::size_t rows, std::size_t len, std::optional<ad::Var<T>> memory,
                    std::span<const std::uint8_t> memory_pad, std::size_t memory_len) const;

  ModelConfig config_;
  ParameterStore<T> store_;
  std::size_t tokens_, enc_pos_, dec_pos_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  Norm enc_final_, dec_final_;
  std::size_t proj_decoder_, proj_encoder_;
};

/// Incremental-free decoding helper: binds the parameters once on an
/// inference tape, encodes one source row, and scores decoder prefixes.
template <class T>
class DecodeSession {
 public:
  DecodeSession(const Transformer<T>& model, std::span<const TokenId> encoder_input);

  /// Log-probabilities of the next token after each prefix. All prefixes
  /// must have the same length and start with the decoder language tag.
  std::vector<std::vector<double>> next_log_probs(const std::vector<std::vector<TokenId>>& prefixes);

 private:
  const Transformer<T>* model_;
  ad::Tape<T> tape_;
  std::vector<ad::Var<T>> params_;
  ad::Var<T> memory_;
  std::size_t src_len_;
};

/// Zeroes parameter elements in all later forwards; `keep` covers the flat index.
template <class T>
void apply_prune_mask(ParameterStore<T>& store, std::span<const std::uint8_t> keep) {
  store.set_prune_mask(keep);
}

extern template class Transformer<float>;
extern template class Transformer<double>;
extern template class DecodeSession<float>;
extern template class DecodeSession<double>;

}  // namespace mmtlab
