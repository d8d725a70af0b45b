#include "imt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "imt/error.hpp"
#include "imt/interlingua.hpp"

namespace imt::eval {

namespace {

constexpr double kBleuEps = 1e-9;

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

std::map<std::vector<std::string>, std::int64_t> ngram_counts(const std::vector<std::string>& words, std::size_t n) {
  std::map<std::vector<std::string>, std::int64_t> counts;
  for (std::size_t i = 0; i + n <= words.size(); ++i) ++counts[std::vector<std::string>(words.begin() + i, words.begin() + i + n)];
  return counts;
}

}  // namespace

NgramStats bleu_stats(std::span<const std::string> hypotheses, std::span<const std::string> references) {
  if (hypotheses.size() != references.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(hypotheses.size()) + " hypotheses vs " +
                                               std::to_string(references.size()) + " references");
  }
  if (hypotheses.empty()) throw Error(ErrorCode::EmptyCorpus, "bleu needs at least one sentence");
  NgramStats st;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto hyp = split_ws(hypotheses[s]);
    const auto ref = split_ws(references[s]);
    st.hyp_length += static_cast<std::int64_t>(hyp.size());
    st.ref_length += static_cast<std::int64_t>(ref.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto hc = ngram_counts(hyp, n);
      const auto rc = ngram_counts(ref, n);
      for (const auto& [g, c] : hc) {
        st.totals[n - 1] += c;
        if (auto it = rc.find(g); it != rc.end()) st.matches[n - 1] += std::min(c, it->second);
      }
      if (ref.size() >= n) st.ref_totals[n - 1] += static_cast<std::int64_t>(ref.size() - n + 1);
    }
  }
  return st;
}

double bleu_from_stats(const NgramStats& st) {
  if (st.hyp_length == 0) return st.ref_length == 0 ? 100.0 : 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (st.totals[n] == 0 && st.ref_totals[n] == 0) continue;  // order absent on both sides
    const double m = st.matches[n] == 0 ? kBleuEps : static_cast<double>(st.matches[n]);
    const double t = static_cast<double>(std::max<std::int64_t>(st.totals[n], 1));
    log_sum += std::log(m / t);
  }
  const double r = static_cast<double>(st.ref_length);
  const double c = static_cast<double>(st.hyp_length);
  const double bp = std::exp(std::min(0.0, 1.0 - r / c));
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

double bleu(std::span<const std::string> hypotheses, std::span<const std::string> references) {
  return bleu_from_stats(bleu_stats(hypotheses, references));
}

std::string ids_to_text(std::span<const std::int32_t> ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(ids[i]);
  }
  return out;
}

data::TokenIds payload(std::span<const std::int32_t> framed) {
  auto b = framed.begin();
  auto e = framed.end();
  if (b != e && *b == tok::kBos) ++b;
  if (b != e && *(e - 1) == tok::kEos) --e;
  return data::TokenIds(b, e);
}

std::vector<data::TokenIds> translate_ids(const reg::Pipeline& pipeline, std::span<const data::TokenIds> sources,
                                          std::size_t batch_size) {
  std::vector<data::TokenIds> out;
  out.reserve(sources.size());
  for (std::size_t first = 0; first < sources.size(); first += batch_size) {
    const auto chunk = sources.subspan(first, std::min(batch_size, sources.size() - first));
    const auto ids = data::pad_rows(chunk);
    auto part = pipeline.translate(ids, data::non_pad_mask(ids));
    for (auto& p : part) out.push_back(std::move(p));
  }
  return out;
}

TokenAccuracy token_accuracy(const reg::Pipeline& pipeline, std::span<const data::ParallelBatch> batches) {
  TokenAccuracy acc;
  for (const auto& b : batches) {
    const auto shifted = nn::shift_targets(b.tgt_ids);
    const auto logits = pipeline.logits(pipeline.memory(b.src_ids, b.src_mask), shifted.input);
    const auto V = logits.dim(2);
    const auto v = logits.values();
    const auto rows = shifted.output.rows();
    const auto cols = shifted.output.cols();
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index t = 0; t < cols; ++t) {
        const auto target = shifted.output(i, t);
        if (target == tok::kPad) continue;
        const double* row = v.data() + (i * cols + t) * V;
        const auto best = std::max_element(row, row + V) - row;
        acc.total += 1;
        acc.correct += best == target ? 1 : 0;
      }
    }
  }
  return acc;
}

TranslationResult translate_file(const reg::Pipeline& pipeline, const tok::SubwordModel& src_model,
                                 const tok::SubwordModel& tgt_model, const std::filesystem::path& in,
                                 const std::filesystem::path& out,
                                 const std::optional<std::filesystem::path>& reference) {
  const auto lines = data::read_lines(in);
  std::vector<data::TokenIds> sources;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto words = tok::preprocess_line(lines[i]);
    if (!words) continue;
    sources.push_back(tok::bpe_apply(src_model, *words));
    where.push_back(i);
  }
  const auto hyps = translate_ids(pipeline, sources);
  TranslationResult result;
  result.lines.assign(lines.size(), std::string());
  for (std::size_t k = 0; k < hyps.size(); ++k) result.lines[where[k]] = tok::bpe_decode(tgt_model, hyps[k]);
  data::write_lines(out, result.lines);

  if (reference) {
    auto refs = data::read_lines(*reference);
    for (auto& r : refs) {
      const auto words = tok::preprocess_line(r, static_cast<std::size_t>(-1));
      r.clear();
      if (!words) continue;
      for (std::size_t j = 0; j < words->size(); ++j) r += (j ? " " : "") + (*words)[j];
    }
    result.bleu = bleu(result.lines, refs);
  }
  return result;
}

CompatibilityReport at_compatibility(const reg::SystemState& state, const std::string& lang_a,
                                     const std::string& lang_b, std::span<const data::TokenIds> a_sentences,
                                     std::span<const data::TokenIds> b_sentences, const Renderer& render) {
  if (a_sentences.size() != b_sentences.size()) {
    throw Error(ErrorCode::LengthMismatch, "A and B test sets differ in size");
  }
  const auto p_aa = reg::compose_pipeline(state, lang_a, lang_a);
  const auto p_ba = reg::compose_pipeline(state, lang_b, lang_a);
  const auto auto_out = translate_ids(p_aa, a_sentences);
  const auto trans_out = translate_ids(p_ba, b_sentences);
  std::vector<std::string> refs, ae, tr;
  for (std::size_t i = 0; i < a_sentences.size(); ++i) {
    refs.push_back(render(payload(a_sentences[i])));
    ae.push_back(render(auto_out[i]));
    tr.push_back(render(trans_out[i]));
  }
  CompatibilityReport r;
  r.decoder_language = lang_a;
  r.bleu_autoencode = bleu(ae, refs);
  r.bleu_translate = bleu(tr, refs);
  r.bleu_a_t = bleu(tr, ae);
  return r;
}

std::size_t export_representations(const reg::SystemState& state, std::span<const std::string> languages,
                                   std::span<const std::vector<data::TokenIds>> sentences,
                                   const std::filesystem::path& out, std::size_t batch_size) {
  if (languages.size() != sentences.size()) {
    throw Error(ErrorCode::LengthMismatch, "one sentence list per language is required");
  }
  std::vector<nn::EncoderStack> encoders;
  for (const auto& lang : languages) {
    const auto& m = state.module(lang, reg::Role::Encoder);
    encoders.push_back({m.config, m.params});
  }
  std::ofstream os(out, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::IoFailure, "cannot write " + out.string());
  const auto D = encoders.empty() ? 0 : encoders.front().config.model_dim;
  os << "lang,idx";
  for (int d = 0; d < D; ++d) os << ",d" << d;
  os << "\n";

  std::size_t records = 0;
  char buf[32];
  for (std::size_t k = 0; k < languages.size(); ++k) {
    const auto& sents = sentences[k];
    const auto dim = encoders[k].config.model_dim;
    for (std::size_t first = 0; first < sents.size(); first += batch_size) {
      const auto chunk = std::span<const data::TokenIds>(sents).subspan(first, std::min(batch_size, sents.size() - first));
      const auto ids = data::pad_rows(chunk);
      const auto mask = data::non_pad_mask(ids);
      const auto h = il::pool_representation(nn::encode(encoders[k], ids, mask), mask).h;
      const auto v = h.values();
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        os << languages[k] << "," << first + i;
        for (int d = 0; d < dim; ++d) {
          std::snprintf(buf, sizeof buf, "%.9g", v[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(d)]);
          os << "," << buf;
        }
        os << "\n";
        ++records;
      }
    }
  }
  if (!os) throw Error(ErrorCode::IoFailure, "write failed for " + out.string());
  return records;
}

}  // namespace imt::eval
