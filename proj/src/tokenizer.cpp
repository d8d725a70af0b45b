#include "imt/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>
#include <zlib.h>

#include "imt/error.hpp"

namespace imt::tok {

namespace {

const std::vector<std::string>& reserved_symbols() {
  static const std::vector<std::string> symbols{"<pad>", "<s>", "</s>", "<unk>"};
  return symbols;
}

bool ends_with_marker(std::string_view s) {
  return s.size() >= kEndOfWord.size() && s.substr(s.size() - kEndOfWord.size()) == kEndOfWord;
}

void validate_utf8(std::string_view raw) {
  std::int32_t i = 0;
  const auto n = static_cast<std::int32_t>(raw.size());
  while (i < n) {
    UChar32 c;
    U8_NEXT(raw.data(), i, n, c);
    if (c < 0) throw Error(ErrorCode::InvalidUtf8, "malformed UTF-8 sequence");
  }
}

}  // namespace

std::optional<Words> preprocess_line(std::string_view raw, std::size_t max_len) {
  validate_utf8(raw);
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error(ErrorCode::InvalidUtf8, "NFC normalizer unavailable");
  icu::UnicodeString text = icu::UnicodeString::fromUTF8(icu::StringPiece(raw.data(), static_cast<std::int32_t>(raw.size())));
  text.toLower(icu::Locale::getRoot());
  icu::UnicodeString normalized = nfc->normalize(text, status);
  if (U_FAILURE(status)) throw Error(ErrorCode::InvalidUtf8, "normalization failed");
  std::string utf8;
  normalized.toUTF8String(utf8);

  Words words;
  std::istringstream stream(utf8);
  std::string w;
  while (stream >> w) words.push_back(w);
  if (words.empty() || words.size() > max_len) return std::nullopt;
  return words;
}

std::vector<std::string> initial_symbols(std::string_view word) {
  std::vector<std::string> out;
  std::int32_t i = 0;
  const auto n = static_cast<std::int32_t>(word.size());
  while (i < n) {
    const std::int32_t start = i;
    UChar32 c;
    U8_NEXT(word.data(), i, n, c);
    if (c < 0) throw Error(ErrorCode::InvalidUtf8, "malformed UTF-8 sequence");
    out.emplace_back(word.substr(static_cast<std::size_t>(start), static_cast<std::size_t>(i - start)));
  }
  if (!out.empty()) out.back() += kEndOfWord;
  return out;
}

// ---------------------------------------------------------------------------

SubwordModel::SubwordModel() : SubwordModel({}, {}) {}

SubwordModel::SubwordModel(std::vector<Merge> merges, std::vector<std::string> symbols) : merges_(std::move(merges)) {
  symbols_ = reserved_symbols();
  for (auto& s : symbols) {
    if (std::find(reserved_symbols().begin(), reserved_symbols().end(), s) != reserved_symbols().end()) continue;
    symbols_.push_back(std::move(s));
  }
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    if (!index_.emplace(symbols_[i], static_cast<std::int32_t>(i)).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate symbol '" + symbols_[i] + "'");
    }
  }
  for (std::size_t r = 0; r < merges_.size(); ++r) ranks_.emplace(merges_[r], r);
}

std::int32_t SubwordModel::id(const std::string& symbol) const {
  auto it = index_.find(symbol);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& SubwordModel::symbol(std::int32_t id) const {
  if (id < 0 || id >= size()) throw Error(ErrorCode::TokenOutOfRange, "id " + std::to_string(id));
  return symbols_[static_cast<std::size_t>(id)];
}

std::optional<std::size_t> SubwordModel::rank(const std::string& left, const std::string& right) const {
  auto it = ranks_.find(Merge{left, right});
  if (it == ranks_.end()) return std::nullopt;
  return it->second;
}

std::uint32_t SubwordModel::fingerprint() const {
  std::string vocab;
  for (std::size_t i = 0; i < symbols_.size(); ++i) vocab += symbols_[i] + '\t' + std::to_string(i) + '\n';
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(vocab.data()), static_cast<uInt>(vocab.size())));
}

std::string SubwordModel::to_text() const {
  std::ostringstream os;
  os << "BPE v1 " << merges_.size() << '\n';
  for (const auto& [l, r] : merges_) os << l << '\t' << r << '\n';
  os << "VOCAB\n";
  for (std::size_t i = 0; i < symbols_.size(); ++i) os << symbols_[i] << '\t' << i << '\n';
  return os.str();
}

SubwordModel SubwordModel::from_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  auto fail = [](const std::string& why) { return Error(ErrorCode::InvalidArgument, "subword model: " + why); };
  if (!std::getline(in, line) || line.rfind("BPE v1 ", 0) != 0) throw fail("missing 'BPE v1' header");
  std::size_t count = 0;
  try {
    count = std::stoul(line.substr(7));
  } catch (const std::exception&) {
    throw fail("bad merge count");
  }
  std::vector<Merge> merges;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw fail("truncated merge list");
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw fail("merge line without tab");
    merges.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  if (!std::getline(in, line) || line != "VOCAB") throw fail("missing VOCAB sentinel");
  std::vector<std::string> symbols;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw fail("vocab line without tab");
    const auto id = std::stoul(line.substr(tab + 1));
    if (id != symbols.size()) throw fail("vocabulary ids are not dense");
    symbols.push_back(line.substr(0, tab));
  }
  if (symbols.size() < static_cast<std::size_t>(kNumReserved) ||
      !std::equal(reserved_symbols().begin(), reserved_symbols().end(), symbols.begin())) {
    throw fail("reserved symbols missing");
  }
  return SubwordModel(std::move(merges), std::move(symbols));
}

void SubwordModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << to_text();
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

SubwordModel SubwordModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

// ---------------------------------------------------------------------------

namespace {

void merge_in_place(std::vector<std::string>& symbols, const std::string& left, const std::string& right) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      out.push_back(left + right);
      ++i;
    } else {
      out.push_back(std::move(symbols[i]));
    }
  }
  symbols = std::move(out);
}

}  // namespace

SubwordModel bpe_learn(const std::vector<Words>& corpus, std::size_t num_merges) {
  std::map<std::string, std::int64_t> freq;
  for (const auto& sentence : corpus)
    for (const auto& w : sentence)
      if (!w.empty()) ++freq[w];
  if (freq.empty()) throw Error(ErrorCode::EmptyCorpus, "no words to learn from");

  std::vector<std::pair<std::vector<std::string>, std::int64_t>> words;
  std::set<std::string> alphabet;
  for (const auto& [w, n] : freq) {
    auto symbols = initial_symbols(w);
    alphabet.insert(symbols.begin(), symbols.end());
    words.emplace_back(std::move(symbols), n);
  }

  std::vector<std::string> vocab(alphabet.begin(), alphabet.end());
  std::set<std::string> known(alphabet.begin(), alphabet.end());
  std::vector<Merge> merges;
  while (merges.size() < num_merges) {
    std::map<Merge, std::int64_t> counts;
    for (const auto& [symbols, n] : words)
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) counts[{symbols[i], symbols[i + 1]}] += n;
    if (counts.empty()) break;
    // std::map iterates in lexicographic order, so the first maximum wins ties.
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it)
      if (it->second > best->second) best = it;
    const Merge merge = best->first;
    merges.push_back(merge);
    for (auto& [symbols, n] : words) merge_in_place(symbols, merge.first, merge.second);
    const std::string joined = merge.first + merge.second;
    if (known.insert(joined).second) vocab.push_back(joined);
  }
  return SubwordModel(std::move(merges), std::move(vocab));
}

std::vector<std::string> apply_merges(std::vector<std::string> symbols, const SubwordModel& model, std::size_t first,
                                      std::size_t last) {
  while (symbols.size() > 1) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto r = model.rank(symbols[i], symbols[i + 1]);
      if (r && *r >= first && *r < last && (!best || *r < *best)) best = r;
    }
    if (!best) break;
    const auto& m = model.merges()[*best];
    merge_in_place(symbols, m.first, m.second);
  }
  return symbols;
}

std::vector<std::int32_t> bpe_apply(const SubwordModel& model, std::span<const std::string> words) {
  std::vector<std::int32_t> ids{kBos};
  for (const auto& w : words) {
    if (w.empty()) continue;
    for (const auto& s : apply_merges(initial_symbols(w), model, 0, model.merges().size())) ids.push_back(model.id(s));
  }
  ids.push_back(kEos);
  return ids;
}

std::string bpe_decode(const SubwordModel& model, std::span<const std::int32_t> ids) {
  std::string out;
  std::string pending;
  auto flush = [&] {
    if (pending.empty()) return;
    if (!out.empty()) out += ' ';
    out += pending;
    pending.clear();
  };
  for (auto id : ids) {
    const auto& s = model.symbol(id);
    if (id == kPad || id == kBos || id == kEos) continue;
    if (ends_with_marker(s)) {
      pending += s.substr(0, s.size() - kEndOfWord.size());
      flush();
    } else {
      pending += s;
    }
  }
  flush();
  return out;
}

SubwordModel build_shared_vocab(std::span<const SubwordModel> models) {
  if (models.empty()) throw Error(ErrorCode::InvalidArgument, "shared vocabulary needs at least one model");
  std::vector<std::string> symbols;
  std::set<std::string> seen;
  std::vector<Merge> merges;
  std::set<Merge> seen_merges;
  for (const auto& m : models) {
    for (std::int32_t i = kNumReserved; i < m.size(); ++i) {
      if (seen.insert(m.symbol(i)).second) symbols.push_back(m.symbol(i));
    }
    for (const auto& merge : m.merges()) {
      if (seen_merges.insert(merge).second) merges.push_back(merge);
    }
  }
  SubwordModel shared(std::move(merges), std::move(symbols));
  shared.language_tag = models.front().language_tag;
  return shared;
}

}  // namespace imt::tok
