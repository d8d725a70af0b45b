#include "imt/registry.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <zlib.h>

#include "imt/config.hpp"
#include "imt/error.hpp"
#include "imt/interlingua.hpp"

namespace imt::reg {

std::string_view to_string(Role role) { return role == Role::Encoder ? "encoder" : "decoder"; }

LanguageModule make_module(const std::string& language, Role role, const nn::ModelConfig& config, std::uint64_t seed,
                           std::uint32_t vocab_fingerprint) {
  LanguageModule m;
  m.language = language;
  m.role = role;
  m.config = config;
  m.params = role == Role::Encoder ? nn::make_encoder(config, seed).params : nn::make_decoder(config, seed).params;
  m.vocab_fingerprint = vocab_fingerprint;
  return m;
}

// ---------------------------------------------------------------------------
// state

namespace {

std::string key_name(const std::string& language, Role role) { return language + "/" + std::string(to_string(role)); }

}  // namespace

const LanguageModule& SystemState::module(const std::string& language, Role role) const {
  auto it = modules.find({language, role});
  if (it == modules.end()) throw Error(ErrorCode::MissingModule, key_name(language, role));
  return it->second;
}

LanguageModule& SystemState::module(const std::string& language, Role role) {
  auto it = modules.find({language, role});
  if (it == modules.end()) throw Error(ErrorCode::MissingModule, key_name(language, role));
  return it->second;
}

bool SystemState::has(const std::string& language, Role role) const { return modules.count({language, role}) != 0; }

std::vector<std::string> SystemState::languages() const {
  std::vector<std::string> out;
  for (const auto& [key, m] : modules)
    if (std::find(out.begin(), out.end(), key.first) == out.end()) out.push_back(key.first);
  return out;
}

void audit_aliasing(const SystemState& state) {
  std::unordered_map<const void*, std::string> owners;
  auto visit = [&](const std::string& owner, const Tensor& t) {
    const void* storage = t.impl().get();
    auto [it, inserted] = owners.emplace(storage, owner);
    if (!inserted) throw Error(ErrorCode::ParameterAliasing, owner + " shares a tensor with " + it->second);
  };
  for (const auto& [key, m] : state.modules)
    for (const auto& [name, t] : m.params) visit(key_name(key.first, key.second) + ":" + name, t);
  if (state.codebooks) {
    for (std::size_t j = 0; j < state.codebooks->tables.size(); ++j) visit("codebook:" + std::to_string(j), state.codebooks->tables[j]);
  }
}

void register_module(SystemState& state, LanguageModule module, bool overwrite) {
  const ModuleKey key{module.language, module.role};
  auto it = state.modules.find(key);
  if (it != state.modules.end() && !overwrite) throw Error(ErrorCode::DuplicateModule, key_name(key.first, key.second));
  for (auto& [name, t] : module.params) t.set_requires_grad(!module.frozen);
  SystemState candidate;
  candidate.codebooks = state.codebooks;
  for (const auto& [k, m] : state.modules)
    if (k != key) candidate.modules.emplace(k, m);
  candidate.modules.emplace(key, module);
  audit_aliasing(candidate);
  state.modules.insert_or_assign(key, std::move(module));
}

void set_frozen(SystemState& state, const std::string& language, Role role, bool frozen) {
  auto& m = state.module(language, role);
  m.frozen = frozen;
  for (auto& [name, t] : m.params) {
    t.set_requires_grad(!frozen);
    if (frozen) t.zero_grad();
  }
}

std::vector<std::pair<std::string, Tensor>> trainable_parameters(const SystemState& state) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& [key, m] : state.modules) {
    if (m.frozen) continue;
    for (const auto& [name, t] : m.params) out.emplace_back(key_name(key.first, key.second) + ":" + name, t);
  }
  if (state.codebooks) {
    for (std::size_t j = 0; j < state.codebooks->tables.size(); ++j)
      out.emplace_back("codebook:table" + std::to_string(j), state.codebooks->tables[j]);
  }
  return out;
}

std::uint32_t parameter_digest(const LanguageModule& module) {
  uLong crc = crc32(0L, Z_NULL, 0);
  for (const auto& [name, t] : module.params) {
    crc = crc32(crc, reinterpret_cast<const Bytef*>(name.data()), static_cast<uInt>(name.size()));
    const auto v = t.values();
    crc = crc32(crc, reinterpret_cast<const Bytef*>(v.data()), static_cast<uInt>(v.size() * sizeof(double)));
  }
  return static_cast<std::uint32_t>(crc);
}

// ---------------------------------------------------------------------------
// composition

Pipeline::Pipeline(nn::EncoderStack encoder, nn::DecoderStack decoder, std::optional<vq::CodebookSet> codebooks)
    : encoder_(std::move(encoder)), decoder_(std::move(decoder)), codebooks_(std::move(codebooks)) {}

Pipeline::Memory Pipeline::memory(const data::IdMatrix& src_ids, const data::BoolMatrix& src_mask,
                                  std::mt19937_64* rng) const {
  Memory m;
  m.encoded = nn::encode(encoder_, src_ids, src_mask, rng);
  if (!codebooks_) {
    m.states = m.encoded;
    m.mask = src_mask;
    return m;
  }
  // Pooled vector through the bottleneck; the decoder sees a single slot.
  const auto pooled = il::pool_representation(m.encoded, src_mask).h;
  m.dvq = vq::dvq_forward(*codebooks_, pooled);
  m.states = reshape(m.dvq->zq_st, {src_ids.rows(), 1, encoder_.config.model_dim});
  m.mask = data::BoolMatrix::Constant(src_ids.rows(), 1, true);
  return m;
}

Tensor Pipeline::logits(const Memory& memory, const data::IdMatrix& tgt_in, std::mt19937_64* rng) const {
  return nn::decode_teacher_forced(decoder_, memory.states, memory.mask, tgt_in, rng);
}

std::vector<data::TokenIds> Pipeline::translate(const data::IdMatrix& src_ids, const data::BoolMatrix& src_mask,
                                                std::optional<int> max_out) const {
  const auto m = memory(src_ids, src_mask);
  if (!max_out) max_out = 2 * static_cast<int>(src_ids.cols()) + 5;
  return nn::generate_greedy(decoder_, m.states, m.mask, max_out);
}

Pipeline compose_pipeline(const SystemState& state, const std::string& src, const std::string& tgt,
                          std::optional<std::uint32_t> src_vocab, std::optional<std::uint32_t> tgt_vocab) {
  const auto& enc = state.module(src, Role::Encoder);
  const auto& dec = state.module(tgt, Role::Decoder);
  if (enc.config.model_dim != dec.config.model_dim) {
    throw Error(ErrorCode::DimMismatch, "encoder D=" + std::to_string(enc.config.model_dim) +
                                            " vs decoder D=" + std::to_string(dec.config.model_dim));
  }
  auto check = [](const LanguageModule& m, std::optional<std::uint32_t> expected) {
    if (expected && m.frozen && m.vocab_fingerprint != 0 && *expected != m.vocab_fingerprint) {
      throw Error(ErrorCode::VocabFingerprintMismatch, "frozen " + key_name(m.language, m.role) + " was trained with another vocabulary");
    }
  };
  check(enc, src_vocab);
  check(dec, tgt_vocab);
  if (state.codebooks && state.codebooks->dim() != enc.config.model_dim) {
    throw Error(ErrorCode::DimMismatch, "codebook dimension differs from the model dimension");
  }
  return Pipeline(nn::EncoderStack{enc.config, enc.params}, nn::DecoderStack{dec.config, dec.params}, state.codebooks);
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr char kMagic[4] = {'I', 'M', 'T', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kCodebookRole = 2;

class Writer {
 public:
  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void tensor(const std::string& name, const Tensor& t) {
    str(name);
    u8(static_cast<std::uint8_t>(t.rank()));
    for (auto e : t.shape()) u64(static_cast<std::uint64_t>(e));
    for (double v : t.values()) u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::size_t end) : bytes_(b), end_(end) {}
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw Error(ErrorCode::ChecksumMismatch, "checkpoint truncated");
  }
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::pair<std::string, Tensor> tensor() {
    auto name = str();
    const auto rank = u8();
    Shape shape;
    for (int i = 0; i < rank; ++i) shape.push_back(static_cast<std::int64_t>(u64()));
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    need(4 * n);
    std::vector<double> values(n);
    for (auto& v : values) v = static_cast<double>(std::bit_cast<float>(u32()));
    return {std::move(name), Tensor(std::move(shape), std::move(values))};
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t checksum(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

std::string codebook_config(const vq::CodebookSet& cb) {
  std::ostringstream os;
  os.precision(17);
  os << "n = " << cb.n << "\nK = " << cb.K << "\nsub_dim = " << cb.sub_dim << "\nbeta = " << cb.beta << '\n';
  return os.str();
}

}  // namespace

std::vector<std::uint8_t> serialize(const SystemState& state) {
  Writer w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(state.modules.size() + (state.codebooks ? 1 : 0)));
  for (const auto& [key, m] : state.modules) {
    w.str(m.language);
    w.u8(static_cast<std::uint8_t>(m.role));
    w.u8(m.frozen ? 1 : 0);
    w.str(m.config.to_text());
    w.u32(m.vocab_fingerprint);
    w.u32(static_cast<std::uint32_t>(m.params.size()));
    for (const auto& [name, t] : m.params) w.tensor(name, t);
  }
  if (state.codebooks) {
    const auto& cb = *state.codebooks;
    w.str("");
    w.u8(kCodebookRole);
    w.u8(0);
    w.str(codebook_config(cb));
    w.u32(0);
    w.u32(static_cast<std::uint32_t>(cb.tables.size()));
    for (std::size_t j = 0; j < cb.tables.size(); ++j) w.tensor("table" + std::to_string(j), cb.tables[j]);
  }
  w.u32(checksum(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

SystemState deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw Error(ErrorCode::BadMagic, "not an IMT1 checkpoint");
  }
  if (bytes.size() < 16) throw Error(ErrorCode::ChecksumMismatch, "checkpoint truncated");
  const auto body = bytes.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[body + static_cast<std::size_t>(i)]) << (8 * i);
  if (stored != checksum(bytes.data(), body)) throw Error(ErrorCode::ChecksumMismatch, "checkpoint CRC does not match");

  Reader r(bytes, body);
  for (int i = 0; i < 4; ++i) r.u8();
  const auto version = r.u32();
  if (version != kVersion) throw Error(ErrorCode::VersionUnsupported, "checkpoint version " + std::to_string(version));
  const auto count = r.u32();
  SystemState state;
  for (std::uint32_t k = 0; k < count; ++k) {
    auto language = r.str();
    const auto role = r.u8();
    const bool frozen = r.u8() != 0;
    const auto config = r.str();
    const auto fingerprint = r.u32();
    const auto tensors = r.u32();
    nn::ParameterSet params;
    for (std::uint32_t t = 0; t < tensors; ++t) params.insert(r.tensor());
    if (role == kCodebookRole) {
      vq::CodebookSet cb;
      for (const auto& [key, value] : cfg::parse_key_values(config)) {
        if (key == "n") cb.n = std::stoi(value);
        else if (key == "K") cb.K = std::stoi(value);
        else if (key == "sub_dim") cb.sub_dim = std::stoll(value);
        else if (key == "beta") cb.beta = std::stod(value);
      }
      for (int j = 0; j < cb.n; ++j) {
        auto it = params.find("table" + std::to_string(j));
        if (it == params.end()) throw Error(ErrorCode::InvalidArgument, "codebook table missing");
        it->second.set_requires_grad(true);
        cb.tables.push_back(it->second);
      }
      state.codebooks = std::move(cb);
      continue;
    }
    if (role > 1) throw Error(ErrorCode::InvalidArgument, "unknown module role " + std::to_string(role));
    LanguageModule m;
    m.language = std::move(language);
    m.role = static_cast<Role>(role);
    m.frozen = frozen;
    m.config = nn::ModelConfig::from_text(config);
    m.vocab_fingerprint = fingerprint;
    m.params = std::move(params);
    std::int64_t total = 0;
    for (const auto& [name, t] : m.params) total += t.numel();
    const auto expected = m.role == Role::Encoder ? nn::encoder_parameter_count(m.config) : nn::decoder_parameter_count(m.config);
    if (total != expected) throw Error(ErrorCode::ShapeMismatch, "module " + m.language + " has the wrong parameter count");
    register_module(state, std::move(m));
  }
  if (!r.done()) throw Error(ErrorCode::ChecksumMismatch, "trailing bytes before checksum");
  return state;
}

void save_checkpoint(const SystemState& state, const std::filesystem::path& path) {
  const auto bytes = serialize(state);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

SystemState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace imt::reg
