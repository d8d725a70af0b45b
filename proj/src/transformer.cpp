#include "imt/transformer.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "imt/config.hpp"
#include "imt/tokenizer.hpp"

namespace imt::nn {

void ModelConfig::validate() const {
  auto bad = [](const std::string& why) { return Error(ErrorCode::InvalidConfig, why); };
  if (num_blocks < 1 || num_heads < 1 || model_dim < 1 || ff_dim < 1 || max_len < 2 || vocab_size < 5) {
    throw bad("model extents must be positive (vocab_size >= 5, max_len >= 2)");
  }
  if (model_dim % num_heads != 0) throw bad("model_dim must be divisible by num_heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw bad("dropout must be in [0, 1)");
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "num_blocks = " << num_blocks << '\n'
     << "num_heads = " << num_heads << '\n'
     << "model_dim = " << model_dim << '\n'
     << "ff_dim = " << ff_dim << '\n'
     << "dropout = " << dropout << '\n'
     << "max_len = " << max_len << '\n'
     << "vocab_size = " << vocab_size << '\n';
  return os.str();
}

ModelConfig ModelConfig::from_text(std::string_view text) {
  ModelConfig c;
  for (const auto& [key, value] : cfg::parse_key_values(text)) {
    if (key == "num_blocks") c.num_blocks = std::stoi(value);
    else if (key == "num_heads") c.num_heads = std::stoi(value);
    else if (key == "model_dim") c.model_dim = std::stoi(value);
    else if (key == "ff_dim") c.ff_dim = std::stoi(value);
    else if (key == "dropout") c.dropout = std::stod(value);
    else if (key == "max_len") c.max_len = std::stoi(value);
    else if (key == "vocab_size") c.vocab_size = std::stoi(value);
    else throw Error(ErrorCode::InvalidConfig, "unknown model config key '" + key + "'");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// parameters

namespace {

Tensor xavier(std::int64_t fan_in, std::int64_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return Tensor::uniform({fan_in, fan_out}, -limit, limit, rng);
}

void add_param(ParameterSet& p, const std::string& name, Tensor t) {
  t.set_requires_grad(true);
  p.emplace(name, std::move(t));
}

void add_layer_norm(ParameterSet& p, const std::string& prefix, std::int64_t d) {
  add_param(p, prefix + ".gain", Tensor(Shape{d}, 1.0));
  add_param(p, prefix + ".bias", Tensor(Shape{d}, 0.0));
}

void add_attention(ParameterSet& p, const std::string& prefix, std::int64_t d, std::mt19937_64& rng) {
  for (const char* w : {"wq", "wk", "wv", "wo"}) add_param(p, prefix + "." + w, xavier(d, d, rng));
}

void add_feed_forward(ParameterSet& p, const std::string& prefix, std::int64_t d, std::int64_t f, std::mt19937_64& rng) {
  add_param(p, prefix + ".w1", xavier(d, f, rng));
  add_param(p, prefix + ".b1", Tensor(Shape{f}, 0.0));
  add_param(p, prefix + ".w2", xavier(f, d, rng));
  add_param(p, prefix + ".b2", Tensor(Shape{d}, 0.0));
}

std::string block(int i) { return "block" + std::to_string(i); }

ParameterSet make_stack(const ModelConfig& c, std::uint64_t seed, bool decoder) {
  c.validate();
  std::mt19937_64 rng(seed);
  const std::int64_t d = c.model_dim;
  ParameterSet p;
  // Scaled by sqrt(D) at lookup, so the effective embedding has unit variance.
  const double e = std::sqrt(3.0 / static_cast<double>(d));
  add_param(p, "embed", Tensor::uniform({c.vocab_size, d}, -e, e, rng));
  for (int i = 0; i < c.num_blocks; ++i) {
    add_layer_norm(p, block(i) + ".ln1", d);
    add_attention(p, block(i) + ".self_attn", d, rng);
    add_layer_norm(p, block(i) + ".ln2", d);
    if (decoder) {
      add_attention(p, block(i) + ".cross_attn", d, rng);
      add_layer_norm(p, block(i) + ".ln3", d);
    }
    add_feed_forward(p, block(i) + ".ff", d, c.ff_dim, rng);
  }
  add_layer_norm(p, "final_ln", d);
  if (decoder) {
    add_param(p, "out.w", xavier(d, c.vocab_size, rng));
    add_param(p, "out.b", Tensor(Shape{c.vocab_size}, 0.0));
  }
  return p;
}

const Tensor& param(const ParameterSet& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw Error(ErrorCode::InvalidArgument, "missing parameter " + name);
  return it->second;
}

AttentionWeights attention_weights(const ParameterSet& p, const std::string& prefix) {
  return {param(p, prefix + ".wq"), param(p, prefix + ".wk"), param(p, prefix + ".wv"), param(p, prefix + ".wo")};
}

Tensor norm(const ParameterSet& p, const std::string& prefix, const Tensor& x) {
  return layer_norm(x, param(p, prefix + ".gain"), param(p, prefix + ".bias"));
}

Tensor feed_forward(const ParameterSet& p, const std::string& prefix, const Tensor& x) {
  auto h = gelu(add(matmul(x, param(p, prefix + ".w1")), param(p, prefix + ".b1")));
  return add(matmul(h, param(p, prefix + ".w2")), param(p, prefix + ".b2"));
}

Tensor maybe_dropout(const Tensor& x, double p, std::mt19937_64* rng) {
  if (rng == nullptr || p <= 0.0) return x;
  return dropout(x, p, *rng);
}

Tensor embed_tokens(const ParameterSet& p, const ModelConfig& c, const data::IdMatrix& ids) {
  const auto batch = ids.rows(), length = ids.cols();
  if (length > c.max_len) {
    throw Error(ErrorCode::LengthExceeded, "sequence of " + std::to_string(length) + " exceeds max_len " + std::to_string(c.max_len));
  }
  auto x = embedding_lookup(param(p, "embed"), std::span<const std::int32_t>(ids.data(), static_cast<std::size_t>(ids.size())),
                            {batch, length});
  x = scale(x, std::sqrt(static_cast<double>(c.model_dim)));
  return add(x, positional_encoding(length, c.model_dim, c.max_len));
}

}  // namespace

EncoderStack make_encoder(const ModelConfig& config, std::uint64_t seed) { return {config, make_stack(config, seed, false)}; }

DecoderStack make_decoder(const ModelConfig& config, std::uint64_t seed) { return {config, make_stack(config, seed, true)}; }

std::int64_t encoder_parameter_count(const ModelConfig& c) {
  const std::int64_t d = c.model_dim, f = c.ff_dim;
  const std::int64_t per_block = 2 * (2 * d) + 4 * d * d + (d * f + f + f * d + d);
  return c.vocab_size * d + c.num_blocks * per_block + 2 * d;
}

std::int64_t decoder_parameter_count(const ModelConfig& c) {
  const std::int64_t d = c.model_dim;
  return encoder_parameter_count(c) + c.num_blocks * (4 * d * d + 2 * d) + d * c.vocab_size + c.vocab_size;
}

// ---------------------------------------------------------------------------
// layers

Tensor positional_encoding(std::int64_t length, std::int64_t dim, std::int64_t max_len) {
  if (length > max_len) throw Error(ErrorCode::LengthExceeded, "positional table longer than max_len");
  Tensor pe(Shape{length, dim});
  auto v = pe.mutable_values();
  for (std::int64_t t = 0; t < length; ++t) {
    for (std::int64_t i = 0; i < dim; i += 2) {
      const double angle = static_cast<double>(t) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(dim));
      v[t * dim + i] = std::sin(angle);
      if (i + 1 < dim) v[t * dim + i + 1] = std::cos(angle);
    }
  }
  return pe;
}

Mask key_padding_mask(const data::BoolMatrix& mask) {
  Mask m(Shape{mask.rows(), 1, 1, mask.cols()}, false);
  for (Eigen::Index b = 0; b < mask.rows(); ++b)
    for (Eigen::Index t = 0; t < mask.cols(); ++t) m.bits[static_cast<std::size_t>(b * mask.cols() + t)] = !mask(b, t);
  return m;
}

Mask causal_mask(std::int64_t length) {
  Mask m(Shape{1, 1, length, length}, false);
  for (std::int64_t q = 0; q < length; ++q)
    for (std::int64_t k = q + 1; k < length; ++k) m.bits[static_cast<std::size_t>(q * length + k)] = 1;
  return m;
}

namespace {

Tensor split_heads(const Tensor& x, int heads) {
  const auto batch = x.dim(0), length = x.dim(1), d = x.dim(2);
  return permute(reshape(x, {batch, length, heads, d / heads}), {0, 2, 1, 3});
}

}  // namespace

Tensor multi_head_attention(const Tensor& query, const Tensor& key_value, const Mask& blocked,
                            const AttentionWeights& w, int num_heads) {
  if (query.rank() != 3 || key_value.rank() != 3 || query.dim(0) != key_value.dim(0) || query.dim(2) != key_value.dim(2)) {
    throw Error(ErrorCode::ShapeMismatch, "attention expects [B,Tq,D] and [B,Tk,D] inputs");
  }
  const auto batch = query.dim(0), tq = query.dim(1), tk = key_value.dim(1), d = query.dim(2);
  if (d % num_heads != 0) throw Error(ErrorCode::ShapeMismatch, "model dim not divisible by heads");
  if (blocked.shape.size() != 4 || (blocked.shape[0] != 1 && blocked.shape[0] != batch) || blocked.shape[1] != 1 ||
      (blocked.shape[2] != 1 && blocked.shape[2] != tq) || blocked.shape[3] != tk) {
    throw Error(ErrorCode::ShapeMismatch, "attention mask " + shape_string(blocked.shape) + " incompatible");
  }
  for (std::int64_t b = 0; b < blocked.shape[0]; ++b)
    for (std::int64_t q = 0; q < blocked.shape[2]; ++q) {
      bool any = false;
      for (std::int64_t k = 0; k < tk && !any; ++k)
        any = !blocked.bits[static_cast<std::size_t>((b * blocked.shape[2] + q) * tk + k)];
      if (!any) throw Error(ErrorCode::MaskAllFalse, "a query row has no key it may attend to");
    }

  const auto dh = d / num_heads;
  auto q = split_heads(matmul(query, w.wq), num_heads);
  auto k = split_heads(matmul(key_value, w.wk), num_heads);
  auto v = split_heads(matmul(key_value, w.wv), num_heads);
  auto scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
  scores = masked_fill(scores, blocked, -std::numeric_limits<double>::infinity());
  auto ctx = matmul(softmax(scores, -1), v);  // [B,H,Tq,dh]
  ctx = reshape(permute(ctx, {0, 2, 1, 3}), {batch, tq, d});
  return matmul(ctx, w.wo);
}

Tensor encode(const EncoderStack& enc, const data::IdMatrix& ids, const data::BoolMatrix& mask, std::mt19937_64* rng) {
  const auto& p = enc.params;
  const auto& c = enc.config;
  if (mask.rows() != ids.rows() || mask.cols() != ids.cols()) throw Error(ErrorCode::ShapeMismatch, "mask/ids mismatch");
  auto x = maybe_dropout(embed_tokens(p, c, ids), c.dropout, rng);
  const Mask pad = key_padding_mask(mask);
  for (int i = 0; i < c.num_blocks; ++i) {
    const auto b = block(i);
    auto h = norm(p, b + ".ln1", x);
    x = add(x, maybe_dropout(multi_head_attention(h, h, pad, attention_weights(p, b + ".self_attn"), c.num_heads), c.dropout, rng));
    h = norm(p, b + ".ln2", x);
    x = add(x, maybe_dropout(feed_forward(p, b + ".ff", h), c.dropout, rng));
  }
  return norm(p, "final_ln", x);
}

Tensor decode_teacher_forced(const DecoderStack& dec, const Tensor& memory, const data::BoolMatrix& memory_mask,
                             const data::IdMatrix& tgt_in, std::mt19937_64* rng) {
  const auto& p = dec.params;
  const auto& c = dec.config;
  if (memory.rank() != 3 || memory.dim(0) != tgt_in.rows() || memory.dim(2) != c.model_dim ||
      memory_mask.rows() != memory.dim(0) || memory_mask.cols() != memory.dim(1)) {
    throw Error(ErrorCode::ShapeMismatch, "decoder memory " + shape_string(memory.shape()) + " incompatible");
  }
  auto y = maybe_dropout(embed_tokens(p, c, tgt_in), c.dropout, rng);
  const Mask self_mask = causal_mask(tgt_in.cols());
  const Mask cross_mask = key_padding_mask(memory_mask);
  for (int i = 0; i < c.num_blocks; ++i) {
    const auto b = block(i);
    auto h = norm(p, b + ".ln1", y);
    y = add(y, maybe_dropout(multi_head_attention(h, h, self_mask, attention_weights(p, b + ".self_attn"), c.num_heads), c.dropout, rng));
    h = norm(p, b + ".ln2", y);
    y = add(y, maybe_dropout(multi_head_attention(h, memory, cross_mask, attention_weights(p, b + ".cross_attn"), c.num_heads),
                             c.dropout, rng));
    h = norm(p, b + ".ln3", y);
    y = add(y, maybe_dropout(feed_forward(p, b + ".ff", h), c.dropout, rng));
  }
  y = norm(p, "final_ln", y);
  return add(matmul(y, param(p, "out.w")), param(p, "out.b"));
}

std::vector<data::TokenIds> generate_greedy(const DecoderStack& dec, const Tensor& memory,
                                            const data::BoolMatrix& memory_mask, std::optional<int> max_out) {
  const auto batch = memory.dim(0);
  int limit = max_out.value_or(2 * static_cast<int>(memory.dim(1)) + 5);
  if (limit < 1) throw Error(ErrorCode::InvalidArgument, "max_out must be >= 1");
  limit = std::min(limit, dec.config.max_len - 1);

  std::vector<data::TokenIds> prefixes(static_cast<std::size_t>(batch), data::TokenIds{tok::kBos});
  std::vector<bool> done(static_cast<std::size_t>(batch), false);
  const auto vocab = dec.config.vocab_size;
  for (int step = 0; step < limit; ++step) {
    const auto ids = data::pad_rows(prefixes);
    const auto logits = decode_teacher_forced(dec, memory, memory_mask, ids);
    const auto len = ids.cols();
    const auto lv = logits.values();
    bool all_done = true;
    for (std::int64_t b = 0; b < batch; ++b) {
      auto& row = prefixes[static_cast<std::size_t>(b)];
      if (done[static_cast<std::size_t>(b)]) continue;
      const double* l = lv.data() + (b * len + static_cast<std::int64_t>(row.size()) - 1) * vocab;
      std::int32_t best = 0;
      for (std::int32_t v = 1; v < vocab; ++v)
        if (l[v] > l[best]) best = v;
      row.push_back(best);
      if (best == tok::kEos) done[static_cast<std::size_t>(b)] = true;
      else all_done = false;
    }
    if (all_done) break;
  }
  std::vector<data::TokenIds> out;
  out.reserve(prefixes.size());
  for (auto& row : prefixes) {
    data::TokenIds payload;
    for (std::size_t t = 1; t < row.size() && row[t] != tok::kEos; ++t) payload.push_back(row[t]);
    out.push_back(std::move(payload));
  }
  return out;
}

ShiftedTargets shift_targets(const data::IdMatrix& tgt_ids) {
  if (tgt_ids.cols() < 2) throw Error(ErrorCode::ShapeMismatch, "targets need at least <s> and </s>");
  return {tgt_ids.leftCols(tgt_ids.cols() - 1), tgt_ids.rightCols(tgt_ids.cols() - 1)};
}

}  // namespace imt::nn
