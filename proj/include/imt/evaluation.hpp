#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "imt/corpus.hpp"
#include "imt/registry.hpp"
#include "imt/tokenizer.hpp"

namespace imt::eval {

/// Corpus BLEU-4 over whitespace tokens, in [0, 100]. Zero n-gram match
/// counts are replaced by 1e-9 before the geometric mean.
double bleu(std::span<const std::string> hypotheses, std::span<const std::string> references);

struct NgramStats {
  std::int64_t matches[4] = {0, 0, 0, 0};
  std::int64_t totals[4] = {0, 0, 0, 0};
  std::int64_t ref_totals[4] = {0, 0, 0, 0};
  std::int64_t hyp_length = 0;
  std::int64_t ref_length = 0;
};

NgramStats bleu_stats(std::span<const std::string> hypotheses, std::span<const std::string> references);
double bleu_from_stats(const NgramStats& stats);

/// Payload ids joined by single spaces; the default text form for id-level
/// scoring of synthetic data.
std::string ids_to_text(std::span<const std::int32_t> ids);

using Renderer = std::function<std::string(std::span<const std::int32_t>)>;

/// Greedy translation of framed source sentences in order; returns payload
/// ids without <s>/</s>.
std::vector<data::TokenIds> translate_ids(const reg::Pipeline& pipeline, std::span<const data::TokenIds> sources,
                                          std::size_t batch_size = 64);

struct TokenAccuracy {
  std::int64_t correct = 0;
  std::int64_t total = 0;
  double value() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

/// Teacher-forced argmax accuracy over every non-pad target position
/// (including </s>).
TokenAccuracy token_accuracy(const reg::Pipeline& pipeline, std::span<const data::ParallelBatch> batches);

struct TranslationResult {
  std::vector<std::string> lines;
  std::optional<double> bleu;
};

/// Line-by-line: preprocess, segment with `src_model`, decode greedily and
/// write subword-decoded text. Rejected input lines produce empty output
/// lines so that line alignment is kept.
TranslationResult translate_file(const reg::Pipeline& pipeline, const tok::SubwordModel& src_model,
                                 const tok::SubwordModel& tgt_model, const std::filesystem::path& in,
                                 const std::filesystem::path& out,
                                 const std::optional<std::filesystem::path>& reference = std::nullopt);

struct CompatibilityReport {
  std::string decoder_language;
  double bleu_autoencode = 0.0;
  double bleu_translate = 0.0;
  double bleu_a_t = 0.0;
};

/// Report for decoder d_a: autoencoding output from e_a(A), translation
/// output from e_b(B), each scored against the A references, plus the
/// translation scored against the autoencoding output.
CompatibilityReport at_compatibility(const reg::SystemState& state, const std::string& lang_a,
                                     const std::string& lang_b, std::span<const data::TokenIds> a_sentences,
                                     std::span<const data::TokenIds> b_sentences,
                                     const Renderer& render = ids_to_text);

/// Pooled encoder outputs as CSV `lang,idx,d0..d{D-1}`, one record per
/// (sentence, language). `sentences[k]` belongs to `languages[k]`.
/// Returns the number of records written.
std::size_t export_representations(const reg::SystemState& state, std::span<const std::string> languages,
                                   std::span<const std::vector<data::TokenIds>> sentences,
                                   const std::filesystem::path& out, std::size_t batch_size = 64);

/// Strips <s> and </s> framing.
data::TokenIds payload(std::span<const std::int32_t> framed);

}  // namespace imt::eval
