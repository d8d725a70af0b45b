#include "imt/training.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "imt/config.hpp"
#include "imt/error.hpp"

namespace imt::train {

using reg::Role;

void TrainingConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (!(learning_rate > 0)) fail("learning_rate must be > 0");
  if (patience < 1) fail("patience must be >= 1");
  if (batch_size < 2) fail("batch_size must be >= 2");
  if (max_steps < 0) fail("max_steps must be >= 0");
  if (eval_interval < 1) fail("eval_interval must be >= 1");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) fail("adam betas must lie in [0, 1)");
  if (!(eps > 0)) fail("eps must be > 0");
  if (dvq && (dvq_tables < 1 || dvq_codes < 2)) fail("dvq needs at least one table of two codes");
}

std::string TrainingConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "learning_rate = " << learning_rate << "\n"
     << "beta1 = " << beta1 << "\n"
     << "beta2 = " << beta2 << "\n"
     << "eps = " << eps << "\n"
     << "batch_size = " << batch_size << "\n"
     << "max_steps = " << max_steps << "\n"
     << "eval_interval = " << eval_interval << "\n"
     << "patience = " << patience << "\n"
     << "min_improvement = " << min_improvement << "\n"
     << "distance = " << il::to_string(distance_kind) << "\n"
     << "w_xx = " << weights.xx << "\n"
     << "w_yy = " << weights.yy << "\n"
     << "w_xy = " << weights.xy << "\n"
     << "w_yx = " << weights.yx << "\n"
     << "w_d = " << weights.d << "\n"
     << "dvq = " << (dvq ? "true" : "false") << "\n"
     << "dvq_tables = " << dvq_tables << "\n"
     << "dvq_codes = " << dvq_codes << "\n"
     << "dvq_beta = " << dvq_beta << "\n"
     << "seed = " << seed << "\n";
  return os.str();
}

namespace {

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::InvalidConfig, key + ": not a number: " + v);
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used == v.size()) return i;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::InvalidConfig, key + ": not an integer: " + v);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorCode::InvalidConfig, key + ": not a boolean: " + v);
}

}  // namespace

void TrainingConfig::apply_text(std::string_view text) {
  for (const auto& [k, v] : cfg::parse_key_values(text)) {
    if (k == "learning_rate") learning_rate = to_double(k, v);
    else if (k == "beta1") beta1 = to_double(k, v);
    else if (k == "beta2") beta2 = to_double(k, v);
    else if (k == "eps") eps = to_double(k, v);
    else if (k == "batch_size") batch_size = static_cast<int>(to_int(k, v));
    else if (k == "max_steps") max_steps = static_cast<int>(to_int(k, v));
    else if (k == "eval_interval") eval_interval = static_cast<int>(to_int(k, v));
    else if (k == "patience") patience = static_cast<int>(to_int(k, v));
    else if (k == "min_improvement") min_improvement = to_double(k, v);
    else if (k == "distance") distance_kind = il::parse_distance_kind(v);
    else if (k == "w_xx") weights.xx = to_double(k, v);
    else if (k == "w_yy") weights.yy = to_double(k, v);
    else if (k == "w_xy") weights.xy = to_double(k, v);
    else if (k == "w_yx") weights.yx = to_double(k, v);
    else if (k == "w_d") weights.d = to_double(k, v);
    else if (k == "dvq") dvq = to_bool(k, v);
    else if (k == "dvq_tables") dvq_tables = static_cast<int>(to_int(k, v));
    else if (k == "dvq_codes") dvq_codes = static_cast<int>(to_int(k, v));
    else if (k == "dvq_beta") dvq_beta = to_double(k, v);
    else if (k == "seed") seed = static_cast<std::uint64_t>(to_int(k, v));
    else throw Error(ErrorCode::InvalidConfig, "unknown training key: " + k);
  }
}

// ---------------------------------------------------------------------------
// optimizer

void adam_update(const NamedTensors& params, const std::vector<std::vector<double>>& grads, AdamState& state,
                 const TrainingConfig& cfg) {
  if (params.size() != grads.size()) {
    throw Error(ErrorCode::ShapeMismatch, "adam_update: " + std::to_string(params.size()) + " parameters vs " +
                                              std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].second.values().size()) {
      throw Error(ErrorCode::ShapeMismatch, "adam_update: gradient size differs for " + params[i].first);
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, p] = params[i];
    auto theta = const_cast<Tensor&>(p).mutable_values();
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != theta.size()) {
      m.assign(theta.size(), 0.0);
      v.assign(theta.size(), 0.0);
    }
    const auto& g = grads[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      theta[j] -= cfg.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.eps);
    }
  }
}

void apply_gradients(const NamedTensors& params, AdamState& state, const TrainingConfig& cfg) {
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (const auto& [name, p] : params) {
    if (p.has_grad()) grads.push_back(p.grad());
    else grads.emplace_back(p.values().size(), 0.0);
  }
  adam_update(params, grads, state, cfg);
  for (const auto& [name, p] : params) const_cast<Tensor&>(p).zero_grad();
}

// ---------------------------------------------------------------------------
// steps

Tensor sequence_loss(const reg::Pipeline& pipeline, const reg::Pipeline::Memory& memory, const data::IdMatrix& tgt_ids,
                     std::mt19937_64* rng) {
  const auto shifted = nn::shift_targets(tgt_ids);
  const auto logits = pipeline.logits(memory, shifted.input, rng);
  return cross_entropy(logits, std::span<const std::int32_t>(shifted.output.data(), shifted.output.size()),
                       tok::kPad);
}

namespace {

void require_pairable(const data::ParallelBatch& batch) {
  if (batch.size() < 2) throw Error(ErrorCode::BatchTooSmall, "training needs at least two pairs per batch");
}

Tensor weighted_aux(const std::optional<vq::DvqOutput>& a, const std::optional<vq::DvqOutput>& b) {
  Tensor total;
  for (const auto* o : {&a, &b}) {
    if (!*o) continue;
    auto term = add((*o)->codebook_loss, (*o)->commitment_loss);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

il::LossBreakdown joint_forward(const reg::SystemState& state, const data::ParallelBatch& batch,
                                const TrainingConfig& cfg, std::mt19937_64* rng) {
  require_pairable(batch);
  const auto& [x, y] = batch.pair_label;
  const auto& w = cfg.weights;
  const auto p_xx = reg::compose_pipeline(state, x, x);
  const auto p_yy = reg::compose_pipeline(state, y, y);
  const auto p_xy = reg::compose_pipeline(state, x, y);
  const auto p_yx = reg::compose_pipeline(state, y, x);

  // Each source is encoded once; its memory feeds both decoders.
  const auto mem_x = p_xx.memory(batch.src_ids, batch.src_mask, rng);
  const auto mem_y = p_yy.memory(batch.tgt_ids, batch.tgt_mask, rng);

  Tensor l_xx, l_yy, l_xy, l_yx;
  if (w.xx != 0) l_xx = sequence_loss(p_xx, mem_x, batch.src_ids, rng);
  if (w.yy != 0) l_yy = sequence_loss(p_yy, mem_y, batch.tgt_ids, rng);
  if (w.xy != 0) l_xy = sequence_loss(p_xy, mem_x, batch.tgt_ids, rng);
  if (w.yx != 0) l_yx = sequence_loss(p_yx, mem_y, batch.src_ids, rng);

  const auto hx = il::pool_representation(mem_x.encoded, batch.src_mask).h;
  const auto hy = il::pool_representation(mem_y.encoded, batch.tgt_mask).h;
  auto out = il::joint_loss(l_xx, l_yy, l_xy, l_yx, hx, hy, cfg.distance_kind, w);
  if (auto aux = weighted_aux(mem_x.dvq, mem_y.dvq); aux.defined()) out.total = add(out.total, aux);
  return out;
}

il::LossBreakdown add_language_forward(const reg::SystemState& state, const data::ParallelBatch& batch,
                                       const TrainingConfig& cfg, std::mt19937_64* rng) {
  require_pairable(batch);
  const auto& [z, x] = batch.pair_label;
  const auto& dec = state.module(x, Role::Decoder);
  if (!dec.frozen) throw Error(ErrorCode::DecoderNotFrozen, "decoder of '" + x + "' must be frozen before adding '" + z + "'");
  if (dec.vocab_fingerprint != 0 && batch.tgt_vocab != 0 && dec.vocab_fingerprint != batch.tgt_vocab) {
    throw Error(ErrorCode::VocabFingerprintMismatch,
                "'" + x + "' side of the new corpus was segmented with a different vocabulary than the frozen decoder; "
                "re-apply the original '" + x + "' subword model");
  }
  const auto p_zx = reg::compose_pipeline(state, z, x, std::nullopt, batch.tgt_vocab);
  const auto mem_z = p_zx.memory(batch.src_ids, batch.src_mask, rng);
  const auto l_zx = sequence_loss(p_zx, mem_z, batch.tgt_ids, rng);

  il::LossBreakdown out;
  out.weights = il::LossWeights{0, 0, 1, 0, 0};
  out.l_xy = l_zx.item();
  out.total = l_zx;
  if (auto aux = weighted_aux(mem_z.dvq, std::nullopt); aux.defined()) out.total = add(out.total, aux);

  if (cfg.distance_kind != il::DistanceKind::None && state.has(x, Role::Encoder)) {
    // Telemetry only: the existing encoder on the X side, outside the graph.
    const auto enc_x = nn::encode(nn::EncoderStack{state.module(x, Role::Encoder).config, state.module(x, Role::Encoder).params},
                                  batch.tgt_ids, batch.tgt_mask);
    const auto hz = il::pool_representation(mem_z.encoded, batch.src_mask).h.detach();
    const auto hx = il::pool_representation(enc_x, batch.tgt_mask).h.detach();
    out.d = il::distance(cfg.distance_kind, hz, hx).item();
  }
  return out;
}

}  // namespace

il::LossBreakdown joint_train_step(reg::SystemState& state, const data::ParallelBatch& batch, const TrainingConfig& cfg,
                                   AdamState& adam, std::mt19937_64* rng) {
  const auto& [x, y] = batch.pair_label;
  for (const auto& lang : {x, y})
    for (auto role : {Role::Encoder, Role::Decoder})
      if (state.module(lang, role).frozen) {
        throw Error(ErrorCode::InvalidArgument, "joint training needs unfrozen modules; " + lang + "/" +
                                                    std::string(reg::to_string(role)) + " is frozen");
      }
  Tape tape;
  il::LossBreakdown out;
  {
    Tape::Scope scope(tape);
    out = joint_forward(state, batch, cfg, rng);
    backward(out.total);
  }
  apply_gradients(reg::trainable_parameters(state), adam, cfg);
  out.total = out.total.detach();
  return out;
}

il::LossBreakdown joint_eval(const reg::SystemState& state, const data::ParallelBatch& batch, const TrainingConfig& cfg) {
  return joint_forward(state, batch, cfg, nullptr);
}

il::LossBreakdown add_language_train_step(reg::SystemState& state, const data::ParallelBatch& batch,
                                          const TrainingConfig& cfg, AdamState& adam, std::mt19937_64* rng) {
  const auto& z = batch.pair_label.first;
  Tape tape;
  il::LossBreakdown out;
  {
    Tape::Scope scope(tape);
    out = add_language_forward(state, batch, cfg, rng);
    backward(out.total);
  }
  const auto& enc = state.module(z, Role::Encoder);
  NamedTensors params;
  for (const auto& [name, t] : enc.params) params.emplace_back(z + "/encoder:" + name, t);
  // Codebooks stay fixed: they belong to the already trained space.
  if (state.codebooks)
    for (auto& t : state.codebooks->tables) t.zero_grad();
  apply_gradients(params, adam, cfg);
  out.total = out.total.detach();
  return out;
}

il::LossBreakdown add_language_eval(const reg::SystemState& state, const data::ParallelBatch& batch,
                                    const TrainingConfig& cfg) {
  return add_language_forward(state, batch, cfg, nullptr);
}

double task_loss(const il::LossBreakdown& b) {
  double s = 0.0;
  if (b.l_xx) s += b.weights.xx * *b.l_xx;
  if (b.l_yy) s += b.weights.yy * *b.l_yy;
  if (b.l_xy) s += b.weights.xy * *b.l_xy;
  if (b.l_yx) s += b.weights.yx * *b.l_yx;
  return s;
}

// ---------------------------------------------------------------------------
// metrics

MetricsLog::MetricsLog(const std::filesystem::path& path) {
  out_.emplace(path, std::ios::binary | std::ios::trunc);
  if (!*out_) throw Error(ErrorCode::IoFailure, "cannot write metrics to " + path.string());
  *out_ << header() << "\n";
}

std::string MetricsLog::header() { return "step,l_xx,l_yy,l_xy,l_yx,d,total,dev_loss"; }

std::string MetricsLog::format_row(std::int64_t step, const il::LossBreakdown* b, std::optional<double> dev_loss) {
  auto field = [](std::optional<double> v) {
    if (!v) return std::string();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", *v);
    return std::string(buf);
  };
  std::string row = std::to_string(step);
  if (b != nullptr) {
    for (auto v : {b->l_xx, b->l_yy, b->l_xy, b->l_yx, b->d}) row += "," + field(v);
    row += "," + field(b->total.defined() ? std::optional<double>(b->total_value()) : std::nullopt);
  } else {
    row += ",,,,,,";
  }
  row += "," + field(dev_loss);
  return row;
}

void MetricsLog::append(std::int64_t step, const il::LossBreakdown* b, std::optional<double> dev_loss) {
  rows_.push_back(format_row(step, b, dev_loss));
  if (out_) *out_ << rows_.back() << "\n";
  if (dev_loss) flush();
}

void MetricsLog::flush() {
  if (out_) out_->flush();
}

// ---------------------------------------------------------------------------
// loop

reg::SystemState clone_state(const reg::SystemState& state) {
  reg::SystemState out;
  for (const auto& [key, m] : state.modules) {
    auto copy = m;
    for (auto& [name, t] : copy.params) {
      const bool rg = t.requires_grad();
      t = t.detach().clone();
      t.set_requires_grad(rg);
    }
    out.modules.emplace(key, std::move(copy));
  }
  if (state.codebooks) {
    out.codebooks = *state.codebooks;
    for (auto& t : out.codebooks->tables) {
      const bool rg = t.requires_grad();
      t = t.detach().clone();
      t.set_requires_grad(rg);
    }
  }
  return out;
}

double mean_dev_loss(const std::vector<data::ParallelBatch>& batches,
                     const std::function<il::LossBreakdown(const data::ParallelBatch&)>& eval) {
  if (batches.empty()) throw Error(ErrorCode::EmptyDevSet, "no dev batches");
  double total = 0.0;
  double weight = 0.0;
  for (const auto& b : batches) {
    const double n = static_cast<double>(b.size());
    total += n * task_loss(eval(b));
    weight += n;
  }
  return total / weight;
}

TrainResult train_loop(reg::SystemState& state, data::BatchStream& stream, const DevFn& dev_loss, const StepFn& step,
                       const TrainingConfig& cfg, MetricsLog* log) {
  cfg.validate();
  if (!dev_loss) throw Error(ErrorCode::EmptyDevSet, "train_loop needs a dev evaluation");
  TrainResult result;
  if (cfg.max_steps == 0) {
    result.best = clone_state(state);
    result.best_dev_loss = std::numeric_limits<double>::quiet_NaN();
    return result;
  }

  auto evaluate = [&](std::int64_t at, const il::LossBreakdown* last) {
    const double dl = dev_loss();
    result.evals.push_back({at, dl});
    if (log != nullptr) log->append(at, last, dl);
    return dl;
  };

  result.best_dev_loss = evaluate(0, nullptr);
  result.best = clone_state(state);
  int stale = 0;
  for (std::int64_t s = 1; s <= cfg.max_steps; ++s) {
    auto losses = step(stream.next());
    const bool eval_now = s % cfg.eval_interval == 0 || s == cfg.max_steps;
    if (!eval_now) {
      if (log != nullptr) log->append(s, &losses, std::nullopt);
      result.history.push_back({s, std::move(losses)});
      continue;
    }
    const double dl = evaluate(s, &losses);
    result.history.push_back({s, std::move(losses)});
    if (result.best_dev_loss - dl > cfg.min_improvement) {
      result.best_dev_loss = dl;
      result.best_step = s;
      result.best = clone_state(state);
      stale = 0;
    } else if (++stale >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }
  if (log != nullptr) log->flush();
  return result;
}

}  // namespace imt::train
