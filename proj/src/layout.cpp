// SPDX-License-Identifier: Apache-2.0
#include "mmtlab/batch.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "mmtlab/error.hpp"

namespace mmtlab {

std::string_view task_name(Task task) { return task == Task::translation ? "translation" : "denoising"; }

std::size_t Batch::scored_count() const {
  return static_cast<std::size_t>(std::count(score_mask.begin(), score_mask.end(), 1));
}

BatchRow layout_mmt(std::span<const TokenId> source, std::span<const TokenId> target, LanguageId src_lang,
                    LanguageId tgt_lang, const Vocabulary& vocab, std::size_t max_positions, TagPolicy policy) {
  if (source.empty()) throw InvalidArgument("layout_mmt: empty source");
  if (target.empty()) throw InvalidArgument("layout_mmt: empty target");
  if (source.size() + 1 > max_positions || target.size() + 1 > max_positions) {
    throw InvalidArgument(fmt::format("layout_mmt: sequence of {}/{} tokens exceeds {} positions", source.size() + 1,
                                      target.size() + 1, max_positions));
  }
  const TokenId tag = vocab.language_tag(policy == TagPolicy::target_language ? tgt_lang : src_lang);
  BatchRow row;
  row.language = src_lang;
  row.encoder_input.assign(source.begin(), source.end());
  row.encoder_input.push_back(tag);
  row.decoder_input.push_back(tag);
  row.decoder_input.insert(row.decoder_input.end(), target.begin(), target.end());
  row.target.assign(target.begin(), target.end());
  row.target.push_back(Vocabulary::kEos);
  row.score_mask.assign(row.target.size(), 1);
  return row;
}

BatchRow layout_cd(const NoisedExample& noised, const Vocabulary& vocab, std::size_t max_positions) {
  const std::size_t n = noised.original.size();
  if (n == 0 || noised.corrupted.size() != n || noised.masked_flags.size() != n) {
    throw InvalidArgument("layout_cd: malformed noised example");
  }
  if (n + 1 > max_positions) {
    throw InvalidArgument(fmt::format("layout_cd: sequence of {} tokens exceeds {} positions", n + 1, max_positions));
  }
  const TokenId tag = vocab.language_tag(noised.language);
  BatchRow row;
  row.language = noised.language;
  row.encoder_input = noised.corrupted;
  row.encoder_input.push_back(tag);
  row.decoder_input.push_back(tag);
  row.decoder_input.insert(row.decoder_input.end(), noised.corrupted.begin(), noised.corrupted.end());
  row.target = noised.original;
  row.target.push_back(Vocabulary::kLossPad);
  row.score_mask.assign(noised.masked_flags.begin(), noised.masked_flags.end());
  row.score_mask.push_back(0);
  return row;
}

Batch collate(Task task, std::span<const BatchRow> rows) {
  if (rows.empty()) throw InvalidArgument("collate: no rows");
  Batch b;
  b.task = task;
  b.rows = rows.size();
  for (const auto& r : rows) {
    if (r.decoder_input.size() != r.target.size() || r.score_mask.size() != r.target.size()) {
      throw ShapeError("collate: decoder input, target, and score mask lengths differ");
    }
    if (task == Task::denoising && r.encoder_input.size() != r.decoder_input.size()) {
      throw ShapeError("collate: denoising row with unequal encoder/decoder lengths");
    }
    b.src_len = std::max(b.src_len, r.encoder_input.size());
    b.tgt_len = std::max(b.tgt_len, r.target.size());
  }
  if (task == Task::denoising) b.src_len = b.tgt_len = std::max(b.src_len, b.tgt_len);
  b.encoder_tokens.assign(b.rows * b.src_len, Vocabulary::kPad);
  b.encoder_pad.assign(b.rows * b.src_len, 1);
  b.decoder_input.assign(b.rows * b.tgt_len, Vocabulary::kPad);
  b.decoder_pad.assign(b.rows * b.tgt_len, 1);
  b.target.assign(b.rows * b.tgt_len, Vocabulary::kPad);
  b.score_mask.assign(b.rows * b.tgt_len, 0);
  for (std::size_t i = 0; i < b.rows; ++i) {
    const auto& r = rows[i];
    std::copy(r.encoder_input.begin(), r.encoder_input.end(), b.encoder_tokens.begin() + static_cast<std::ptrdiff_t>(i * b.src_len));
    std::fill_n(b.encoder_pad.begin() + static_cast<std::ptrdiff_t>(i * b.src_len), r.encoder_input.size(), 0);
    std::copy(r.decoder_input.begin(), r.decoder_input.end(), b.decoder_input.begin() + static_cast<std::ptrdiff_t>(i * b.tgt_len));
    std::fill_n(b.decoder_pad.begin() + static_cast<std::ptrdiff_t>(i * b.tgt_len), r.decoder_input.size(), 0);
    std::copy(r.target.begin(), r.target.end(), b.target.begin() + static_cast<std::ptrdiff_t>(i * b.tgt_len));
    std::copy(r.score_mask.begin(), r.score_mask.end(), b.score_mask.begin() + static_cast<std::ptrdiff_t>(i * b.tgt_len));
    b.languages.push_back(r.language);
  }
  return b;
}

}  // namespace mmtlab
