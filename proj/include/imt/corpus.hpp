#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "imt/tokenizer.hpp"

namespace imt::data {

using TokenIds = std::vector<std::int32_t>;
using IdMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One sentence pair; both sides are already framed with <s> ... </s>.
struct Example {
  TokenIds src;
  TokenIds tgt;
};

using LanguagePair = std::pair<std::string, std::string>;

/// Padded parallel mini-batch. Row i of `src_ids` translates row i of
/// `tgt_ids`; masks are true exactly on non-pad positions.
struct ParallelBatch {
  IdMatrix src_ids;
  IdMatrix tgt_ids;
  BoolMatrix src_mask;
  BoolMatrix tgt_mask;
  LanguagePair pair_label;
  // Fingerprints of the subword vocabularies used on each side; 0 = unknown.
  std::uint32_t src_vocab = 0;
  std::uint32_t tgt_vocab = 0;

  std::int64_t size() const { return src_ids.rows(); }
};

/// Pads `rows` to a common length with <pad>.
IdMatrix pad_rows(std::span<const TokenIds> rows);
BoolMatrix non_pad_mask(const IdMatrix& ids);

ParallelBatch make_batch(std::span<const Example> examples, LanguagePair label = {});

struct LoadResult {
  std::vector<Example> examples;
  std::size_t dropped = 0;
};

/// Reads two line-aligned UTF-8 files, preprocesses and segments both sides,
/// dropping pairs where either side is rejected.
LoadResult load_parallel(const std::filesystem::path& src_path, const std::filesystem::path& tgt_path,
                         const tok::SubwordModel& model_src, const tok::SubwordModel& model_tgt,
                         std::size_t max_len = 80);

std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, std::span<const std::string> lines);

/// Length-bucketed, seeded batching. Full batches are shuffled; a trailing
/// remainder of at least two examples is kept last, a remainder of one is
/// dropped with a warning.
std::vector<ParallelBatch> make_batches(std::span<const Example> examples, std::size_t batch_size, std::uint64_t seed,
                                        LanguagePair label = {});

/// Endless batch sequence: epoch e is make_batches(examples, batch_size, seed + e).
class BatchStream {
 public:
  BatchStream(std::vector<Example> examples, std::size_t batch_size, std::uint64_t seed, LanguagePair label = {});

  const ParallelBatch& next();
  std::uint64_t epoch() const { return epoch_; }
  void set_vocab_fingerprints(std::uint32_t src, std::uint32_t tgt);

 private:
  void refill();

  std::vector<Example> examples_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  LanguagePair label_;
  std::uint32_t src_vocab_ = 0, tgt_vocab_ = 0;
  std::uint64_t epoch_ = 0;
  std::vector<ParallelBatch> current_;
  std::size_t cursor_ = 0;
};

// ---------------------------------------------------------------------------
// Synthetic multi-way data

enum class Transform { Identity, Reverse, Shift };

struct SyntheticLanguage {
  std::string name;
  bool identity_mapping = false;
  Transform transform = Transform::Identity;
  int shift = 0;
};

/// Every language renders one shared payload sequence through its own
/// symbol bijection followed by its positional transform.
struct SyntheticTaskSpec {
  int payload_vocab = 16;
  int min_len = 4;
  int max_len = 12;
  std::uint64_t seed = 1;
  std::vector<SyntheticLanguage> languages{
      {"a", true, Transform::Identity, 0},
      {"b", false, Transform::Reverse, 0},
      {"c", false, Transform::Identity, 0},
  };

  std::string to_text() const;
  static SyntheticTaskSpec from_text(std::string_view text);
};

struct MultiWayCorpus {
  std::vector<std::string> languages;
  std::vector<TokenIds> payloads;                // shared payload symbols, 0..V-1
  std::vector<std::vector<TokenIds>> rendered;   // [language][sentence] symbols
  std::vector<std::vector<int>> mappings;        // [language] bijection

  std::size_t language_index(const std::string& name) const;
  std::size_t size() const { return payloads.size(); }
};

MultiWayCorpus synth_generate(const SyntheticTaskSpec& spec, std::size_t n);

/// Symbol s becomes token id 4 + s, framed with <s> ... </s>.
TokenIds to_token_ids(std::span<const std::int32_t> symbols);
std::int32_t synthetic_vocab_size(const SyntheticTaskSpec& spec);

/// Surface text for one rendered sentence: word = language name + letter.
std::string render_text(const std::string& language, std::span<const std::int32_t> symbols);

/// Token-id examples for sentences [first, last) of a language pair.
std::vector<Example> pair_examples(const MultiWayCorpus& corpus, const std::string& src, const std::string& tgt,
                                   std::size_t first, std::size_t last);

}  // namespace imt::data
