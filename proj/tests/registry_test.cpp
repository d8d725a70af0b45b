#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <zlib.h>

#include "imt/error.hpp"
#include "imt/registry.hpp"

using namespace imt;
using namespace imt::reg;

namespace {

nn::ModelConfig small(int dim = 8) {
  nn::ModelConfig c;
  c.model_dim = dim;
  c.ff_dim = 2 * dim;
  c.vocab_size = 12;
  c.max_len = 24;
  return c;
}

SystemState two_languages() {
  SystemState s;
  register_module(s, make_module("x", Role::Encoder, small(), 1, 11));
  register_module(s, make_module("x", Role::Decoder, small(), 2, 11));
  register_module(s, make_module("y", Role::Encoder, small(), 3, 22));
  register_module(s, make_module("y", Role::Decoder, small(), 4, 22));
  return s;
}

data::IdMatrix sample_ids() {
  std::vector<data::TokenIds> rows{{1, 5, 6, 7, 2}, {1, 8, 9, 2}, {1, 10, 2}};
  return data::pad_rows(rows);
}

template <typename F>
ErrorCode code_of(F f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidArgument;
}

void patch_crc(std::vector<std::uint8_t>& bytes) {
  const auto body = bytes.size() - 4;
  const auto crc = static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), bytes.data(), static_cast<uInt>(body)));
  for (int i = 0; i < 4; ++i) bytes[body + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(crc >> (8 * i));
}

}  // namespace

TEST(Register, ModulesDuplicatesAndAliasing) {
  SystemState s;
  register_module(s, make_module("tk", Role::Encoder, small(), 1));
  register_module(s, make_module("tk", Role::Decoder, small(), 2));
  EXPECT_EQ(s.modules.size(), 2u);
  EXPECT_EQ(code_of([&] { register_module(s, make_module("tk", Role::Encoder, small(), 3)); }), ErrorCode::DuplicateModule);
  register_module(s, make_module("tk", Role::Encoder, small(), 3), true);
  EXPECT_EQ(s.modules.size(), 2u);

  auto thief = make_module("zz", Role::Encoder, small(), 5);
  thief.params.at("embed") = s.module("tk", Role::Encoder).params.at("embed");
  EXPECT_EQ(code_of([&] { register_module(s, thief); }), ErrorCode::ParameterAliasing);
  EXPECT_FALSE(s.has("zz", Role::Encoder));
}

TEST(Register, LinearGrowth) {
  auto s = two_languages();
  EXPECT_EQ(s.modules.size(), 4u);
  std::map<ModuleKey, std::uint32_t> before;
  for (const auto& [k, m] : s.modules) before[k] = parameter_digest(m);
  register_module(s, make_module("z", Role::Encoder, small(), 9));
  EXPECT_EQ(s.modules.size(), 5u);
  for (const auto& [k, d] : before) EXPECT_EQ(parameter_digest(s.modules.at(k)), d);
  EXPECT_EQ(s.languages(), (std::vector<std::string>{"x", "y", "z"}));
}

TEST(Compose, AutoencoderZeroShotAndErrors) {
  auto s = two_languages();
  auto ids = sample_ids();
  auto mask = data::non_pad_mask(ids);
  auto ae = compose_pipeline(s, "x", "x");
  EXPECT_TRUE(ae.encoder().params.at("embed").shares_storage(s.module("x", Role::Encoder).params.at("embed")));
  EXPECT_EQ(ae.translate(ids, mask).size(), 3u);
  auto cross = compose_pipeline(s, "x", "y");
  EXPECT_TRUE(cross.decoder().params.at("out.w").shares_storage(s.module("y", Role::Decoder).params.at("out.w")));

  EXPECT_EQ(code_of([&] { compose_pipeline(s, "w", "y"); }), ErrorCode::MissingModule);
  register_module(s, make_module("wide", Role::Encoder, small(16), 1));
  EXPECT_EQ(code_of([&] { compose_pipeline(s, "wide", "y"); }), ErrorCode::DimMismatch);

  // Fingerprints are only enforced on frozen modules.
  EXPECT_NO_THROW(compose_pipeline(s, "x", "y", 99, 99));
  set_frozen(s, "y", Role::Decoder, true);
  EXPECT_EQ(code_of([&] { compose_pipeline(s, "x", "y", std::nullopt, 99); }), ErrorCode::VocabFingerprintMismatch);
  EXPECT_NO_THROW(compose_pipeline(s, "x", "y", std::nullopt, 22));
}

TEST(Freeze, FlagsAndGradients) {
  auto s = two_languages();
  EXPECT_EQ(code_of([&] { set_frozen(s, "q", Role::Decoder, true); }), ErrorCode::MissingModule);
  set_frozen(s, "x", Role::Decoder, true);
  const auto before = parameter_digest(s.module("x", Role::Decoder));
  for (const auto& [name, t] : trainable_parameters(s)) EXPECT_EQ(name.find("x/decoder"), std::string::npos);

  auto ids = sample_ids();
  auto mask = data::non_pad_mask(ids);
  auto p = compose_pipeline(s, "y", "x");
  {
    Tape tape;
    Tape::Scope scope(tape);
    auto shifted = nn::shift_targets(ids);
    auto logits = p.logits(p.memory(ids, mask), shifted.input);
    backward(cross_entropy(logits, std::span<const std::int32_t>(shifted.output.data(), shifted.output.size()), 0));
  }
  for (const auto& [name, t] : s.module("x", Role::Decoder).params) EXPECT_FALSE(t.has_grad()) << name;
  EXPECT_TRUE(s.module("y", Role::Encoder).params.at("embed").has_grad());
  EXPECT_EQ(parameter_digest(s.module("x", Role::Decoder)), before);

  set_frozen(s, "x", Role::Decoder, false);
  for (const auto& [name, t] : s.module("x", Role::Decoder).params) EXPECT_TRUE(t.requires_grad());
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  auto s = two_languages();
  set_frozen(s, "x", Role::Decoder, true);
  s.codebooks = vq::codebook_init(2, 4, 8, 3);
  const auto first = serialize(s);
  const auto loaded = deserialize(first);
  EXPECT_EQ(serialize(loaded), first);
  EXPECT_TRUE(loaded.module("x", Role::Decoder).frozen);
  EXPECT_FALSE(loaded.module("x", Role::Encoder).frozen);
  EXPECT_EQ(loaded.module("y", Role::Decoder).vocab_fingerprint, 22u);
  EXPECT_EQ(loaded.module("y", Role::Decoder).config, small());
  ASSERT_TRUE(loaded.codebooks);
  EXPECT_EQ(loaded.codebooks->K, 4);
  EXPECT_EQ(loaded.codebooks->tables.size(), 2u);
  EXPECT_EQ(loaded.modules.size(), 4u);

  const auto path = std::filesystem::temp_directory_path() / "imt_registry_test.ckpt";
  save_checkpoint(s, path);
  const auto from_disk = load_checkpoint(path);
  EXPECT_EQ(serialize(from_disk), first);
  std::filesystem::remove(path);
}

TEST(Checkpoint, ParametersRoundToFloat) {
  auto s = two_languages();
  const auto loaded = deserialize(serialize(s));
  const auto& a = s.module("y", Role::Encoder).params.at("block1.ff.w2");
  const auto& b = loaded.module("y", Role::Encoder).params.at("block1.ff.w2");
  for (std::size_t i = 0; i < a.values().size(); ++i) EXPECT_EQ(b.values()[i], static_cast<double>(static_cast<float>(a.values()[i])));
}

TEST(Checkpoint, GreedyDecodeSurvivesRoundTrip) {
  auto s = two_languages();
  const auto loaded = deserialize(serialize(s));
  auto ids = sample_ids();
  auto mask = data::non_pad_mask(ids);
  for (const auto& [src, tgt] : std::vector<std::pair<std::string, std::string>>{{"x", "y"}, {"y", "x"}, {"x", "x"}}) {
    EXPECT_EQ(compose_pipeline(s, src, tgt).translate(ids, mask), compose_pipeline(loaded, src, tgt).translate(ids, mask));
  }
}

TEST(Checkpoint, CorruptFiles) {
  auto bytes = serialize(two_languages());
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  EXPECT_EQ(code_of([&] { deserialize(truncated); }), ErrorCode::ChecksumMismatch);

  auto flipped = bytes;
  flipped[100] ^= 0x40;
  EXPECT_EQ(code_of([&] { deserialize(flipped); }), ErrorCode::ChecksumMismatch);

  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_EQ(code_of([&] { deserialize(magic); }), ErrorCode::BadMagic);

  auto version = bytes;
  version[4] = 7;
  patch_crc(version);
  EXPECT_EQ(code_of([&] { deserialize(version); }), ErrorCode::VersionUnsupported);

  EXPECT_EQ(code_of([&] { load_checkpoint("/nonexistent/dir/ckpt"); }), ErrorCode::IoFailure);
}

TEST(Checkpoint, HeaderLayout) {
  const auto bytes = serialize(two_languages());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "IMT1");
  EXPECT_EQ(bytes[4], 1);  // version, little-endian
  EXPECT_EQ(bytes[8], 4);  // module count
  // First module: language "x" as a length-prefixed string, then role and frozen bytes.
  EXPECT_EQ(bytes[12], 1);
  EXPECT_EQ(bytes[16], 'x');
  EXPECT_EQ(bytes[17], static_cast<std::uint8_t>(Role::Encoder));
  EXPECT_EQ(bytes[18], 0);
}
