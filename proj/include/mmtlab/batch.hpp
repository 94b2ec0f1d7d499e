// SPDX-License-Identifier: Apache-2.0
//
// Example layout shared by translation and concurrent denoising.
//
//   translation   encoder  x1 .. xn LG      decoder  LG y1 .. ym   target  y1 .. ym </s>
//   denoising     encoder  c1 .. cn LG      decoder  LG c1 .. cn   target  w1 .. wn PD
//
// The language tag is appended on the encoder side and prepended on the
// decoder side, so encoder position i and decoder position i in a denoising
// row predict the same original word w_{i+1}. Only corrupted positions are
// scored in denoising rows; the PD slot never is.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "mmtlab/noise.hpp"
#include "mmtlab/vocabulary.hpp"

namespace mmtlab {

enum class Task : std::uint8_t { translation = 0, denoising = 1 };

std::string_view task_name(Task task);

/// Which language tag a translation row carries.
enum class TagPolicy { target_language, source_language };

struct BatchRow {
  std::vector<TokenId> encoder_input;
  std::vector<TokenId> decoder_input;
  std::vector<TokenId> target;
  std::vector<std::uint8_t> score_mask;
  LanguageId language = 0;
};

/// Rows padded to common lengths; every matrix is [rows x len] row-major.
struct Batch {
  Task task = Task::translation;
  std::size_t rows = 0;
  std::size_t src_len = 0;
  std::size_t tgt_len = 0;
  std::vector<TokenId> encoder_tokens;
  std::vector<TokenId> decoder_input;
  std::vector<TokenId> target;
  std::vector<std::uint8_t> score_mask;
  std::vector<std::uint8_t> encoder_pad;
  std::vector<std::uint8_t> decoder_pad;
  std::vector<LanguageId> languages;

  std::size_t scored_count() const;
  std::size_t token_count() const { return rows * (src_len + tgt_len); }
};

BatchRow layout_mmt(std::span<const TokenId> source, std::span<const TokenId> target, LanguageId src_lang,
                    LanguageId tgt_lang, const Vocabulary& vocab, std::size_t max_positions,
                    TagPolicy policy = TagPolicy::target_language);

BatchRow layout_cd(const NoisedExample& noised, const Vocabulary& vocab, std::size_t max_positions);

/// Pads rows into a batch. All rows of a denoising batch have equal encoder
/// and decoder lengths, so src_len == tgt_len there.
Batch collate(Task task, std::span<const BatchRow> rows);

}  // namespace mmtlab
