#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "imt/corpus.hpp"
#include "imt/tensor.hpp"

namespace imt::nn {

struct ModelConfig {
  int num_blocks = 2;
  int num_heads = 2;
  int model_dim = 64;
  int ff_dim = 128;
  double dropout = 0.0;
  int max_len = 64;
  int vocab_size = 20;

  void validate() const;
  std::string to_text() const;
  static ModelConfig from_text(std::string_view text);
  bool operator==(const ModelConfig&) const = default;
};

/// Named parameter tensors, iterated in name order.
using ParameterSet = std::map<std::string, Tensor>;

struct EncoderStack {
  ModelConfig config;
  ParameterSet params;
};

struct DecoderStack {
  ModelConfig config;
  ParameterSet params;
};

EncoderStack make_encoder(const ModelConfig& config, std::uint64_t seed);
DecoderStack make_decoder(const ModelConfig& config, std::uint64_t seed);

std::int64_t encoder_parameter_count(const ModelConfig& config);
std::int64_t decoder_parameter_count(const ModelConfig& config);

/// Sinusoidal table: pe[t, 2i] = sin(t / 10000^(2i/D)), pe[t, 2i+1] = cos(.).
Tensor positional_encoding(std::int64_t length, std::int64_t dim, std::int64_t max_len);

struct AttentionWeights {
  Tensor wq, wk, wv, wo;  // each [D, D], no biases
};

/// Scaled dot-product attention over `num_heads` heads. `blocked` is true
/// where a query may not attend to a key; it must broadcast to
/// [B, 1, Tq, Tk]. Every query row needs at least one allowed key.
Tensor multi_head_attention(const Tensor& query, const Tensor& key_value, const Mask& blocked,
                            const AttentionWeights& weights, int num_heads);

/// Key-padding mask [B, 1, 1, Tk] blocking pad positions.
Mask key_padding_mask(const data::BoolMatrix& mask);
/// Causal mask [1, 1, T, T] blocking keys after the query.
Mask causal_mask(std::int64_t length);

/// Pre-norm encoder stack; returns [B, T, D]. Pass `rng` to enable dropout.
Tensor encode(const EncoderStack& enc, const data::IdMatrix& ids, const data::BoolMatrix& mask,
              std::mt19937_64* rng = nullptr);

/// Teacher-forced decoder logits [B, T_t, V]; `tgt_in` is <s>-prefixed.
Tensor decode_teacher_forced(const DecoderStack& dec, const Tensor& memory, const data::BoolMatrix& memory_mask,
                             const data::IdMatrix& tgt_in, std::mt19937_64* rng = nullptr);

/// Greedy decoding from <s>; returns payload ids without framing tokens.
/// Defaults to 2 * T_s + 5 output tokens.
std::vector<data::TokenIds> generate_greedy(const DecoderStack& dec, const Tensor& memory,
                                            const data::BoolMatrix& memory_mask,
                                            std::optional<int> max_out = std::nullopt);

/// Splits framed targets into decoder input (drop last column) and
/// prediction targets (drop first column).
struct ShiftedTargets {
  data::IdMatrix input;
  data::IdMatrix output;
};
ShiftedTargets shift_targets(const data::IdMatrix& tgt_ids);

}  // namespace imt::nn
