#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace imt::tok {

inline constexpr std::int32_t kPad = 0;
inline constexpr std::int32_t kBos = 1;
inline constexpr std::int32_t kEos = 2;
inline constexpr std::int32_t kUnk = 3;
inline constexpr std::int32_t kNumReserved = 4;
inline constexpr std::string_view kEndOfWord = "</w>";

using Words = std::vector<std::string>;
using Merge = std::pair<std::string, std::string>;

/// Lowercases, NFC-normalizes and whitespace-splits one line of UTF-8 text.
/// Returns nullopt (rejected) for empty lines and lines longer than
/// `max_len` words. Throws InvalidUtf8 on malformed input.
std::optional<Words> preprocess_line(std::string_view raw, std::size_t max_len = 80);

/// Splits a word into code points, marking the last one with "</w>".
std::vector<std::string> initial_symbols(std::string_view word);

/// Learned byte-pair-encoding merges plus the dense symbol vocabulary.
/// Ids 0..3 are reserved for <pad>, <s>, </s>, <unk>.
class SubwordModel {
 public:
  SubwordModel();
  SubwordModel(std::vector<Merge> merges, std::vector<std::string> symbols);

  const std::vector<Merge>& merges() const { return merges_; }
  const std::vector<std::string>& symbols() const { return symbols_; }
  std::int32_t size() const { return static_cast<std::int32_t>(symbols_.size()); }

  /// Id of `symbol`, or kUnk when it is not in the vocabulary.
  std::int32_t id(const std::string& symbol) const;
  bool contains(const std::string& symbol) const { return index_.count(symbol) != 0; }
  const std::string& symbol(std::int32_t id) const;
  /// Merge rank of the adjacent pair, if it was learned.
  std::optional<std::size_t> rank(const std::string& left, const std::string& right) const;

  /// CRC32 over the vocabulary section; identifies the id mapping.
  std::uint32_t fingerprint() const;

  std::string language_tag;

  std::string to_text() const;
  static SubwordModel from_text(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static SubwordModel load(const std::filesystem::path& path);

 private:
  std::vector<Merge> merges_;
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, std::int32_t> index_;
  std::map<Merge, std::size_t> ranks_;
};

/// Greedy BPE learning: repeatedly merges the most frequent adjacent pair
/// (ties broken by the lexicographically smallest (left, right)).
SubwordModel bpe_learn(const std::vector<Words>& corpus, std::size_t num_merges);

/// Applies merges with rank in [first, last) to an already segmented word.
std::vector<std::string> apply_merges(std::vector<std::string> symbols, const SubwordModel& model, std::size_t first,
                                      std::size_t last);

/// Segments `words` and maps them to ids wrapped as <s> ... </s>.
std::vector<std::int32_t> bpe_apply(const SubwordModel& model, std::span<const std::string> words);

/// Inverse of bpe_apply: drops reserved framing ids and rejoins subwords.
std::string bpe_decode(const SubwordModel& model, std::span<const std::int32_t> ids);

/// Union vocabulary: symbols keep the order of first appearance across
/// `models`, reserved ids stay fixed, merge lists are concatenated uniquely.
SubwordModel build_shared_vocab(std::span<const SubwordModel> models);

}  // namespace imt::tok
