#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "imt/dvq.hpp"
#include "imt/transformer.hpp"

namespace imt::reg {

enum class Role : std::uint8_t { Encoder = 0, Decoder = 1 };

std::string_view to_string(Role role);

struct LanguageModule {
  std::string language;
  Role role = Role::Encoder;
  nn::ModelConfig config;
  nn::ParameterSet params;
  bool frozen = false;
  std::uint32_t vocab_fingerprint = 0;
};

LanguageModule make_module(const std::string& language, Role role, const nn::ModelConfig& config, std::uint64_t seed,
                           std::uint32_t vocab_fingerprint = 0);

using ModuleKey = std::pair<std::string, Role>;

struct SystemState {
  std::map<ModuleKey, LanguageModule> modules;
  /// Present when the decoder input passes through the quantization bottleneck.
  std::optional<vq::CodebookSet> codebooks;

  const LanguageModule& module(const std::string& language, Role role) const;
  LanguageModule& module(const std::string& language, Role role);
  bool has(const std::string& language, Role role) const;
  std::vector<std::string> languages() const;
};

/// Stores `module` after an aliasing audit against every other module.
void register_module(SystemState& state, LanguageModule module, bool overwrite = false);

/// Throws ParameterAliasing if any two parameter tensors share storage.
void audit_aliasing(const SystemState& state);

/// Frozen modules keep their parameters out of the autodiff graph.
void set_frozen(SystemState& state, const std::string& language, Role role, bool frozen);

/// Tensors of every non-frozen module plus the codebooks, in a stable order.
std::vector<std::pair<std::string, Tensor>> trainable_parameters(const SystemState& state);

/// CRC32 over parameter names and raw 64-bit values.
std::uint32_t parameter_digest(const LanguageModule& module);

/// Encoder of one language wired to the decoder of another.
class Pipeline {
 public:
  Pipeline(nn::EncoderStack encoder, nn::DecoderStack decoder, std::optional<vq::CodebookSet> codebooks);

  struct Memory {
    Tensor states;  // [B, T, D] or [B, 1, D] behind the bottleneck
    data::BoolMatrix mask;
    Tensor encoded;  // raw encoder output [B, T, D]
    std::optional<vq::DvqOutput> dvq;
  };

  Memory memory(const data::IdMatrix& src_ids, const data::BoolMatrix& src_mask, std::mt19937_64* rng = nullptr) const;
  Tensor logits(const Memory& memory, const data::IdMatrix& tgt_in, std::mt19937_64* rng = nullptr) const;
  std::vector<data::TokenIds> translate(const data::IdMatrix& src_ids, const data::BoolMatrix& src_mask,
                                        std::optional<int> max_out = std::nullopt) const;

  const nn::EncoderStack& encoder() const { return encoder_; }
  const nn::DecoderStack& decoder() const { return decoder_; }

 private:
  nn::EncoderStack encoder_;
  nn::DecoderStack decoder_;
  std::optional<vq::CodebookSet> codebooks_;
};

/// Any registered encoder with any registered decoder; src == tgt gives the
/// autoencoder. When a fingerprint is given and the corresponding module is
/// frozen, it must match the module's vocabulary.
Pipeline compose_pipeline(const SystemState& state, const std::string& src, const std::string& tgt,
                          std::optional<std::uint32_t> src_vocab = std::nullopt,
                          std::optional<std::uint32_t> tgt_vocab = std::nullopt);

/// Binary checkpoint; parameters are stored as 32-bit floats.
std::vector<std::uint8_t> serialize(const SystemState& state);
SystemState deserialize(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const SystemState& state, const std::filesystem::path& path);
SystemState load_checkpoint(const std::filesystem::path& path);

}  // namespace imt::reg
