#include "imt/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "imt/config.hpp"
#include "imt/error.hpp"

namespace imt::data {

IdMatrix pad_rows(std::span<const TokenIds> rows) {
  std::size_t width = 1;
  for (const auto& r : rows) width = std::max(width, r.size());
  IdMatrix ids = IdMatrix::Constant(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width), tok::kPad);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t t = 0; t < rows[i].size(); ++t)
      ids(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = rows[i][t];
  return ids;
}

BoolMatrix non_pad_mask(const IdMatrix& ids) { return (ids.array() != tok::kPad).matrix(); }

ParallelBatch make_batch(std::span<const Example> examples, LanguagePair label) {
  std::vector<TokenIds> src, tgt;
  src.reserve(examples.size());
  tgt.reserve(examples.size());
  for (const auto& e : examples) {
    src.push_back(e.src);
    tgt.push_back(e.tgt);
  }
  ParallelBatch b;
  b.src_ids = pad_rows(src);
  b.tgt_ids = pad_rows(tgt);
  b.src_mask = non_pad_mask(b.src_ids);
  b.tgt_mask = non_pad_mask(b.tgt_ids);
  b.pair_label = std::move(label);
  return b;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_lines(const std::filesystem::path& path, std::span<const std::string> lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

LoadResult load_parallel(const std::filesystem::path& src_path, const std::filesystem::path& tgt_path,
                         const tok::SubwordModel& model_src, const tok::SubwordModel& model_tgt, std::size_t max_len) {
  const auto src_lines = read_lines(src_path);
  const auto tgt_lines = read_lines(tgt_path);
  if (src_lines.size() != tgt_lines.size()) {
    throw Error(ErrorCode::LineCountMismatch, src_path.string() + " has " + std::to_string(src_lines.size()) +
                                                  " lines, " + tgt_path.string() + " has " +
                                                  std::to_string(tgt_lines.size()));
  }
  LoadResult result;
  for (std::size_t i = 0; i < src_lines.size(); ++i) {
    auto s = tok::preprocess_line(src_lines[i], max_len);
    auto t = tok::preprocess_line(tgt_lines[i], max_len);
    if (!s || !t) {
      ++result.dropped;
      continue;
    }
    result.examples.push_back({tok::bpe_apply(model_src, *s), tok::bpe_apply(model_tgt, *t)});
  }
  return result;
}

std::vector<ParallelBatch> make_batches(std::span<const Example> examples, std::size_t batch_size, std::uint64_t seed,
                                        LanguagePair label) {
  if (batch_size < 2) throw Error(ErrorCode::BatchTooSmall, "batch size must be at least 2");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  // Sort within large chunks so neighbouring examples have similar lengths.
  const std::size_t chunk = batch_size * 50;
  for (std::size_t start = 0; start < order.size(); start += chunk) {
    const auto end = std::min(order.size(), start + chunk);
    std::stable_sort(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) {
                       const auto la = std::max(examples[a].src.size(), examples[a].tgt.size());
                       const auto lb = std::max(examples[b].src.size(), examples[b].tgt.size());
                       return la < lb;
                     });
  }

  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const auto end = std::min(order.size(), start + batch_size);
    groups.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  std::vector<std::size_t> remainder;
  if (!groups.empty() && groups.back().size() < batch_size) {
    remainder = std::move(groups.back());
    groups.pop_back();
  }
  std::shuffle(groups.begin(), groups.end(), rng);
  if (remainder.size() >= 2) {
    groups.push_back(std::move(remainder));
  } else if (remainder.size() == 1) {
    std::clog << "warning: dropping a trailing batch of 1 example\n";
  }

  std::vector<ParallelBatch> batches;
  batches.reserve(groups.size());
  std::vector<Example> buf;
  for (const auto& g : groups) {
    buf.clear();
    for (auto i : g) buf.push_back(examples[i]);
    batches.push_back(make_batch(buf, label));
  }
  return batches;
}

BatchStream::BatchStream(std::vector<Example> examples, std::size_t batch_size, std::uint64_t seed, LanguagePair label)
    : examples_(std::move(examples)), batch_size_(batch_size), seed_(seed), label_(std::move(label)) {
  if (batch_size_ < 2) throw Error(ErrorCode::BatchTooSmall, "batch size must be at least 2");
  if (examples_.size() < 2) throw Error(ErrorCode::BatchTooSmall, "need at least two examples to batch");
  refill();
}

void BatchStream::set_vocab_fingerprints(std::uint32_t src, std::uint32_t tgt) {
  src_vocab_ = src;
  tgt_vocab_ = tgt;
  for (auto& b : current_) {
    b.src_vocab = src;
    b.tgt_vocab = tgt;
  }
}

void BatchStream::refill() {
  current_ = make_batches(examples_, batch_size_, seed_ + epoch_, label_);
  for (auto& b : current_) {
    b.src_vocab = src_vocab_;
    b.tgt_vocab = tgt_vocab_;
  }
  cursor_ = 0;
}

const ParallelBatch& BatchStream::next() {
  if (cursor_ >= current_.size()) {
    ++epoch_;
    refill();
  }
  return current_[cursor_++];
}

// ---------------------------------------------------------------------------

namespace {

std::string transform_name(const SyntheticLanguage& l) {
  switch (l.transform) {
    case Transform::Identity: return "identity";
    case Transform::Reverse: return "reverse";
    case Transform::Shift: return "shift" + std::to_string(l.shift);
  }
  return "identity";
}

SyntheticLanguage parse_language(const std::string& item) {
  // name:mapping:transform
  std::vector<std::string> parts;
  std::stringstream ss(item);
  std::string p;
  while (std::getline(ss, p, ':')) parts.push_back(p);
  if (parts.size() != 3) throw Error(ErrorCode::InvalidConfig, "language entry must be name:mapping:transform");
  SyntheticLanguage l;
  l.name = parts[0];
  if (parts[1] == "identity") {
    l.identity_mapping = true;
  } else if (parts[1] != "random") {
    throw Error(ErrorCode::InvalidConfig, "mapping must be identity or random");
  }
  if (parts[2] == "identity") {
    l.transform = Transform::Identity;
  } else if (parts[2] == "reverse") {
    l.transform = Transform::Reverse;
  } else if (parts[2].rfind("shift", 0) == 0) {
    l.transform = Transform::Shift;
    l.shift = std::stoi(parts[2].substr(5));
  } else {
    throw Error(ErrorCode::InvalidConfig, "unknown transform " + parts[2]);
  }
  return l;
}

TokenIds apply_transform(const SyntheticLanguage& l, TokenIds seq) {
  switch (l.transform) {
    case Transform::Identity: break;
    case Transform::Reverse: std::reverse(seq.begin(), seq.end()); break;
    case Transform::Shift:
      if (!seq.empty()) {
        const auto n = static_cast<int>(seq.size());
        const int k = ((l.shift % n) + n) % n;
        std::rotate(seq.begin(), seq.begin() + k, seq.end());
      }
      break;
  }
  return seq;
}

}  // namespace

std::string SyntheticTaskSpec::to_text() const {
  std::ostringstream os;
  os << "payload_vocab = " << payload_vocab << '\n'
     << "min_len = " << min_len << '\n'
     << "max_len = " << max_len << '\n'
     << "seed = " << seed << '\n'
     << "languages = ";
  for (std::size_t i = 0; i < languages.size(); ++i) {
    const auto& l = languages[i];
    os << (i ? "," : "") << l.name << ':' << (l.identity_mapping ? "identity" : "random") << ':' << transform_name(l);
  }
  os << '\n';
  return os.str();
}

SyntheticTaskSpec SyntheticTaskSpec::from_text(std::string_view text) {
  SyntheticTaskSpec spec;
  auto kv = cfg::parse_key_values(text);
  for (const auto& [key, value] : kv) {
    if (key == "payload_vocab") {
      spec.payload_vocab = std::stoi(value);
    } else if (key == "min_len") {
      spec.min_len = std::stoi(value);
    } else if (key == "max_len") {
      spec.max_len = std::stoi(value);
    } else if (key == "seed") {
      spec.seed = std::stoull(value);
    } else if (key == "languages") {
      spec.languages.clear();
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) spec.languages.push_back(parse_language(cfg::trim(item)));
    } else {
      throw Error(ErrorCode::InvalidConfig, "unknown synthetic spec key '" + key + "'");
    }
  }
  if (spec.payload_vocab < 2 || spec.payload_vocab > 26) throw Error(ErrorCode::InvalidConfig, "payload_vocab must be in [2, 26]");
  if (spec.min_len < 1 || spec.max_len < spec.min_len) throw Error(ErrorCode::InvalidConfig, "bad length range");
  return spec;
}

std::size_t MultiWayCorpus::language_index(const std::string& name) const {
  auto it = std::find(languages.begin(), languages.end(), name);
  if (it == languages.end()) throw Error(ErrorCode::InvalidArgument, "unknown language " + name);
  return static_cast<std::size_t>(it - languages.begin());
}

MultiWayCorpus synth_generate(const SyntheticTaskSpec& spec, std::size_t n) {
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "synthetic corpus needs n >= 1");
  MultiWayCorpus corpus;
  std::mt19937_64 rng(spec.seed);
  for (const auto& l : spec.languages) {
    corpus.languages.push_back(l.name);
    std::vector<int> mapping(static_cast<std::size_t>(spec.payload_vocab));
    std::iota(mapping.begin(), mapping.end(), 0);
    if (!l.identity_mapping) std::shuffle(mapping.begin(), mapping.end(), rng);
    corpus.mappings.push_back(std::move(mapping));
  }
  std::uniform_int_distribution<int> length(spec.min_len, spec.max_len);
  std::uniform_int_distribution<int> symbol(0, spec.payload_vocab - 1);
  corpus.rendered.resize(spec.languages.size());
  for (std::size_t i = 0; i < n; ++i) {
    TokenIds payload(static_cast<std::size_t>(length(rng)));
    for (auto& s : payload) s = symbol(rng);
    for (std::size_t li = 0; li < spec.languages.size(); ++li) {
      TokenIds mapped(payload.size());
      for (std::size_t t = 0; t < payload.size(); ++t) mapped[t] = corpus.mappings[li][static_cast<std::size_t>(payload[t])];
      corpus.rendered[li].push_back(apply_transform(spec.languages[li], std::move(mapped)));
    }
    corpus.payloads.push_back(std::move(payload));
  }
  return corpus;
}

TokenIds to_token_ids(std::span<const std::int32_t> symbols) {
  TokenIds ids;
  ids.reserve(symbols.size() + 2);
  ids.push_back(tok::kBos);
  for (auto s : symbols) ids.push_back(tok::kNumReserved + s);
  ids.push_back(tok::kEos);
  return ids;
}

std::int32_t synthetic_vocab_size(const SyntheticTaskSpec& spec) { return tok::kNumReserved + spec.payload_vocab; }

std::string render_text(const std::string& language, std::span<const std::int32_t> symbols) {
  std::string out;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i) out += ' ';
    out += language;
    out += static_cast<char>('a' + symbols[i]);
  }
  return out;
}

std::vector<Example> pair_examples(const MultiWayCorpus& corpus, const std::string& src, const std::string& tgt,
                                   std::size_t first, std::size_t last) {
  const auto si = corpus.language_index(src);
  const auto ti = corpus.language_index(tgt);
  last = std::min(last, corpus.size());
  std::vector<Example> out;
  for (std::size_t i = first; i < last; ++i) {
    out.push_back({to_token_ids(corpus.rendered[si][i]), to_token_ids(corpus.rendered[ti][i])});
  }
  return out;
}

}  // namespace imt::data
