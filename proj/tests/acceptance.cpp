// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
// and exits nonzero if any criterion fails.
//
//   acceptance            run every criterion
//   acceptance 2 8 10     run a subset (criteria that need a trained
//                         system train it on demand)
//   acceptance --report F also write the verdicts to F and exit zero when
//                         every criterion produced a verdict (used by ctest)

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>

#include <unistd.h>

#include "imt/dvq.hpp"
#include "imt/evaluation.hpp"
#include "imt/gradcheck.hpp"
#include "imt/interlingua.hpp"
#include "imt/registry.hpp"
#include "imt/training.hpp"
#include "op_cases.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace imt;
using reg::Role;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

void progress(const std::string& msg) {
  std::fprintf(stderr, "  .. %s\n", msg.c_str());
  std::fflush(stderr);
}

// ---------------------------------------------------------------------------
// Shared synthetic setup

constexpr std::size_t kTrain = 5000, kDev = 500, kTest = 200;

struct Experiment {
  data::SyntheticTaskSpec spec;
  data::MultiWayCorpus corpus;
  nn::ModelConfig model;

  Experiment() {
    corpus = data::synth_generate(spec, kTrain + kDev + kTest);
    model.num_blocks = 2;
    model.num_heads = 2;
    model.model_dim = 64;
    model.ff_dim = 128;
    model.vocab_size = data::synthetic_vocab_size(spec);
  }

  std::vector<data::Example> train(const std::string& x, const std::string& y) const {
    return data::pair_examples(corpus, x, y, 0, kTrain);
  }
  std::vector<data::ParallelBatch> dev(const std::string& x, const std::string& y) const {
    return data::make_batches(data::pair_examples(corpus, x, y, kTrain, kTrain + kDev), 100, 0, {x, y});
  }
  std::vector<data::TokenIds> test_side(const std::string& lang) const {
    std::vector<data::TokenIds> out;
    const auto li = corpus.language_index(lang);
    for (std::size_t i = kTrain + kDev; i < corpus.size(); ++i) out.push_back(data::to_token_ids(corpus.rendered[li][i]));
    return out;
  }
};

train::TrainingConfig joint_training(std::uint64_t seed, il::DistanceKind kind = il::DistanceKind::Corr) {
  train::TrainingConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 32;
  cfg.max_steps = 20000;
  cfg.eval_interval = 250;
  cfg.patience = 4;
  cfg.distance_kind = kind;
  cfg.seed = seed;
  return cfg;
}

train::TrainingConfig add_training(std::uint64_t seed) {
  auto cfg = joint_training(seed);
  cfg.eval_interval = 500;
  cfg.patience = 4;
  cfg.max_steps = 20000;
  return cfg;
}

struct RunOutput {
  reg::SystemState state;
  train::TrainResult result;
  std::vector<std::string> csv;
  double seconds = 0.0;
};

RunOutput run_joint(const Experiment& ex, const train::TrainingConfig& cfg, std::optional<int> fixed_steps = std::nullopt) {
  const auto t0 = Clock::now();
  RunOutput out;
  auto& s = out.state;
  const auto base = cfg.seed * 16;
  reg::register_module(s, reg::make_module("a", Role::Encoder, ex.model, base + 1));
  reg::register_module(s, reg::make_module("a", Role::Decoder, ex.model, base + 2));
  reg::register_module(s, reg::make_module("b", Role::Encoder, ex.model, base + 3));
  reg::register_module(s, reg::make_module("b", Role::Decoder, ex.model, base + 4));
  data::BatchStream stream(ex.train("a", "b"), static_cast<std::size_t>(cfg.batch_size), cfg.seed, {"a", "b"});
  const auto dev = ex.dev("a", "b");
  auto loop_cfg = cfg;
  if (fixed_steps) {
    // Fixed budget: evaluate only at the end and never stop early.
    loop_cfg.max_steps = *fixed_steps;
    loop_cfg.eval_interval = *fixed_steps;
    loop_cfg.patience = 1 << 30;
  }
  train::AdamState adam;
  train::MetricsLog log;
  out.result = train::train_loop(
      s, stream,
      [&] { return train::mean_dev_loss(dev, [&](const data::ParallelBatch& b) { return train::joint_eval(s, b, cfg); }); },
      [&](const data::ParallelBatch& b) { return train::joint_train_step(s, b, cfg, adam); }, loop_cfg, &log);
  out.csv = log.rows();
  out.seconds = seconds_since(t0);
  return out;
}

RunOutput run_add(const Experiment& ex, const reg::SystemState& joint, const train::TrainingConfig& cfg) {
  const auto t0 = Clock::now();
  RunOutput out;
  out.state = train::clone_state(joint);
  auto& s = out.state;
  reg::set_frozen(s, "a", Role::Decoder, true);
  reg::register_module(s, reg::make_module("c", Role::Encoder, ex.model, cfg.seed * 16 + 7));
  data::BatchStream stream(ex.train("c", "a"), static_cast<std::size_t>(cfg.batch_size), cfg.seed, {"c", "a"});
  const auto dev = ex.dev("c", "a");
  train::AdamState adam;
  train::MetricsLog log;
  out.result = train::train_loop(
      s, stream,
      [&] {
        return train::mean_dev_loss(dev, [&](const data::ParallelBatch& b) { return train::add_language_eval(s, b, cfg); });
      },
      [&](const data::ParallelBatch& b) { return train::add_language_train_step(s, b, cfg, adam); }, cfg, &log);
  out.csv = log.rows();
  out.seconds = seconds_since(t0);
  return out;
}

double accuracy(const reg::SystemState& s, const Experiment& ex, const std::string& x, const std::string& y) {
  return eval::token_accuracy(reg::compose_pipeline(s, x, y), ex.dev(x, y)).value();
}

double greedy_bleu(const reg::SystemState& s, const Experiment& ex, const std::string& x, const std::string& y) {
  const auto src = ex.test_side(x);
  const auto ref = ex.test_side(y);
  const auto hyp = eval::translate_ids(reg::compose_pipeline(s, x, y), src);
  std::vector<std::string> h, r;
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    h.push_back(eval::ids_to_text(hyp[i]));
    r.push_back(eval::ids_to_text(eval::payload(ref[i])));
  }
  return eval::bleu(h, r);
}

// Lazily computed shared state for criteria that depend on training runs.
struct Context {
  Experiment ex;
  std::optional<RunOutput> joint;
  std::optional<RunOutput> added;
  std::map<reg::ModuleKey, std::uint32_t> digests_before_add;

  const RunOutput& joint_run() {
    if (!joint) {
      progress("joint training a<->b");
      joint = run_joint(ex, joint_training(1));
      progress(fmt("joint training finished: %zu steps, %.0f s", joint->result.history.size(), joint->seconds));
    }
    return *joint;
  }

  const RunOutput& add_run() {
    if (!added) {
      const auto& j = joint_run();
      for (const auto& [k, m] : j.result.best.modules) digests_before_add[k] = reg::parameter_digest(m);
      progress("adding c against the frozen a decoder");
      added = run_add(ex, j.result.best, add_training(2));
      progress(fmt("language addition finished: %zu steps, %.0f s", added->result.history.size(), added->seconds));
    }
    return *added;
  }
};

// ---------------------------------------------------------------------------
// 1

void perturb(nn::ParameterSet& params, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& [name, t] : params)
    for (auto& v : t.mutable_values()) v += u(rng);
}

Outcome gradient_integrity() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  int failures = 0;
  std::int64_t checked = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    for (const auto& c : imt::testing::differentiable_op_cases(rng)) {
      auto x = Tensor::uniform({3, 4}, c.lo, c.hi, rng);
      const auto r = grad_check(c.f, x, 1e-5, 1e-4);
      checked += r.checked;
      if (!r.passed) ++failures;
      if (r.max_relative_error > worst) {
        worst = r.max_relative_error;
        worst_name = c.name;
      }
    }
  }

  // Full joint objective with the correlation distance.
  data::SyntheticTaskSpec spec;
  spec.payload_vocab = 8;
  spec.min_len = 2;
  spec.max_len = 5;
  const auto corpus = data::synth_generate(spec, 6);
  nn::ModelConfig cfg;
  cfg.num_blocks = 2;
  cfg.model_dim = 8;
  cfg.num_heads = 2;
  cfg.ff_dim = 16;
  cfg.vocab_size = data::synthetic_vocab_size(spec);
  const auto ex = data::pair_examples(corpus, "a", "b", 0, 6);
  const auto batch = data::make_batch(ex, {"a", "b"});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    reg::SystemState s;
    std::mt19937_64 rng(100 + seed);
    int k = 0;
    for (const auto* lang : {"a", "b"})
      for (auto role : {Role::Encoder, Role::Decoder}) {
        auto m = reg::make_module(lang, role, cfg, seed * 8 + static_cast<std::uint64_t>(k++));
        perturb(m.params, rng);
        reg::register_module(s, m);
      }
    std::vector<Tensor> leaves;
    for (const auto& [name, t] : reg::trainable_parameters(s)) leaves.push_back(t);
    train::TrainingConfig tc;
    tc.distance_kind = il::DistanceKind::Corr;
    const auto r = grad_check_leaves([&] { return train::joint_eval(s, batch, tc).total; }, leaves, 1e-5, 1e-4, 3, seed);
    checked += r.checked;
    if (!r.passed) ++failures;
    if (r.max_relative_error > worst) {
      worst = r.max_relative_error;
      worst_name = "joint_loss";
    }
  }
  const double secs = seconds_since(t0);
  return {failures == 0 && secs < 60.0,
          fmt("%lld coordinates, %d failing checks, max rel err %.2e (%s), %.1f s", static_cast<long long>(checked),
              failures, worst, worst_name.c_str(), secs)};
}

// ---------------------------------------------------------------------------
// 2

Outcome correlation_algebra() {
  std::mt19937_64 rng(5);
  const auto H = Tensor::uniform({32, 8}, -1, 1, rng);
  const auto G = Tensor::uniform({32, 8}, -1, 1, rng);
  const double self = il::correlation_distance(H, H).item();
  const double opposite = il::correlation_distance(H, neg(H)).item();

  auto Ha = H.clone();
  auto v = Ha.mutable_values();
  std::uniform_real_distribution<double> pa(0.1, 5.0), pb(-3.0, 3.0);
  for (int j = 0; j < 8; ++j) {
    const double a = pa(rng), b = pb(rng);
    for (int i = 0; i < 32; ++i) v[static_cast<std::size_t>(i * 8 + j)] = a * v[static_cast<std::size_t>(i * 8 + j)] + b;
  }
  const double affine_gap = std::abs(il::correlation_distance(Ha, G).item() - il::correlation_distance(H, G).item());

  const double hand = il::correlation_distance(Tensor(Shape{4, 1}, std::vector<double>{1, 2, 3, 4}),
                                               Tensor(Shape{4, 1}, std::vector<double>{1, 3, 2, 4}))
                          .item();
  const bool pass = std::abs(self) <= 1e-9 && std::abs(opposite - 2.0) <= 1e-9 && affine_gap <= 1e-9 &&
                    std::abs(hand - 0.2) <= 1e-15;
  return {pass, fmt("d(H,H)=%.1e d(H,-H)-2=%.1e affine gap=%.1e D=1 case=%.17g", self, opposite - 2.0, affine_gap, hand)};
}

// ---------------------------------------------------------------------------
// 3, 4

Outcome joint_convergence(Context& ctx) {
  const auto& run = ctx.joint_run();
  const auto& s = run.result.best;
  const double aa = accuracy(s, ctx.ex, "a", "a"), bb = accuracy(s, ctx.ex, "b", "b");
  const double ab = accuracy(s, ctx.ex, "a", "b"), ba = accuracy(s, ctx.ex, "b", "a");
  const double bleu_ab = greedy_bleu(s, ctx.ex, "a", "b"), bleu_ba = greedy_bleu(s, ctx.ex, "b", "a");
  const auto steps = run.result.history.size();
  const bool pass = aa >= 0.99 && bb >= 0.99 && ab >= 0.90 && ba >= 0.90 && bleu_ab >= 90 && bleu_ba >= 90 &&
                    steps <= 20000 && run.seconds <= 1800;
  return {pass, fmt("acc aa=%.4f bb=%.4f ab=%.4f ba=%.4f, greedy BLEU ab=%.2f ba=%.2f, best step %lld of %zu, %.0f s", aa,
                    bb, ab, ba, bleu_ab, bleu_ba, static_cast<long long>(run.result.best_step), steps, run.seconds)};
}

Outcome interlingua_trend(Context& ctx) {
  const auto& h = ctx.joint_run().result.history;
  const std::size_t n = h.size();
  const std::size_t tenth = std::max<std::size_t>(1, n / 10);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < tenth; ++i) {
    first += *h[i].losses.d;
    last += *h[n - 1 - i].losses.d;
  }
  first /= static_cast<double>(tenth);
  last /= static_cast<double>(tenth);
  const double final_d = *h.back().losses.d;
  return {last < first && final_d < 0.1,
          fmt("mean d first 10%% = %.4f, last 10%% = %.4f, final d = %.4f over %zu steps", first, last, final_d, n)};
}

// ---------------------------------------------------------------------------
// 5, 6

Outcome incremental_addition(Context& ctx) {
  const auto& run = ctx.add_run();
  const auto& s = run.result.best;
  bool frozen_same = reg::parameter_digest(s.module("a", Role::Decoder)) == ctx.digests_before_add.at({"a", Role::Decoder}) &&
                     reg::parameter_digest(run.state.module("a", Role::Decoder)) ==
                         ctx.digests_before_add.at({"a", Role::Decoder});
  bool others_same = true;
  for (const auto& [k, d] : ctx.digests_before_add) others_same = others_same && reg::parameter_digest(s.modules.at(k)) == d;
  const double ca = accuracy(s, ctx.ex, "c", "a");
  const bool pass = frozen_same && others_same && ca >= 0.90 && run.seconds <= 900 && s.modules.size() == 5;
  return {pass, fmt("frozen a decoder %s, other modules %s, %zu modules, acc ca=%.4f, %zu steps, %.0f s",
                    frozen_same ? "hash-identical" : "CHANGED", others_same ? "unchanged" : "CHANGED", s.modules.size(), ca,
                    run.result.history.size(), run.seconds)};
}

Outcome zero_shot(Context& ctx) {
  const auto& s = ctx.add_run().result.best;
  const double cb = accuracy(s, ctx.ex, "c", "b");
  const double bleu_cb = greedy_bleu(s, ctx.ex, "c", "b");
  const auto& h = ctx.add_run().result.history;
  return {cb >= 0.70, fmt("zero-shot c->b acc=%.4f (chance %.3f), greedy BLEU %.2f, final telemetry d(c,a)=%.4f", cb,
                          1.0 / ctx.ex.spec.payload_vocab, bleu_cb, h.back().losses.d.value_or(-1))};
}

// ---------------------------------------------------------------------------
// 7

Outcome distance_ablation(Context& ctx) {
  constexpr int kBudget = 1000;
  int holds = 0;
  std::string detail;
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const auto corr = run_joint(ctx.ex, joint_training(seed, il::DistanceKind::Corr), kBudget);
    const auto mx = run_joint(ctx.ex, joint_training(seed, il::DistanceKind::Max), kBudget);
    const double lc = corr.result.evals.back().dev_loss, lm = mx.result.evals.back().dev_loss;
    holds += lc <= lm ? 1 : 0;
    detail += fmt("%sseed %llu corr=%.4f max=%.4f", detail.empty() ? "" : "; ", static_cast<unsigned long long>(seed), lc, lm);
    progress(fmt("ablation seed %llu done", static_cast<unsigned long long>(seed)));
  }
  return {holds >= 2, fmt("dev task loss at %d steps: %s; ordering holds on %d/3", kBudget, detail.c_str(), holds)};
}

// ---------------------------------------------------------------------------
// 8

Outcome dvq_correctness() {
  std::mt19937_64 rng(8);
  int trials = 0, mismatches = 0;
  for (int n : {1, 2})
    for (int K = 2; K <= 8; ++K)
      for (int D : {2, 4, 6, 8}) {
        const auto cb = vq::codebook_init(n, K, D, static_cast<std::uint64_t>(100 * n + 10 * K + D));
        const auto all = vq::enumerate_reconstructions(cb);
        for (int rep = 0; rep < 18; ++rep, ++trials) {
          const auto z = Tensor::uniform({1, D}, -0.5, 0.5, rng);
          std::size_t best = 0;
          double best_d = 1e300;
          for (std::size_t r = 0; r < all.size(); ++r) {
            double d = 0.0;
            for (int c = 0; c < D; ++c) d += (z.values()[c] - all[r][c]) * (z.values()[c] - all[r][c]);
            if (d < best_d) {
              best_d = d;
              best = r;
            }
          }
          const auto q = vq::quantize_decomposed(cb, z);
          for (int c = 0; c < D; ++c) mismatches += q.zq.values()[c] != all[best][c] ? 1 : 0;
        }
      }

  // Straight-through: gradient w.r.t. z equals the gradient w.r.t. a leaf
  // holding the quantized values.
  const auto cb = vq::codebook_init(2, 4, 8, 3);
  auto z = Tensor::uniform({5, 8}, -1, 1, rng);
  z.set_requires_grad(true);
  const auto w = Tensor::uniform({5, 8}, -1, 1, rng);
  std::vector<double> gz;
  {
    Tape tape;
    Tape::Scope scope(tape);
    const auto out = vq::dvq_forward(cb, z);
    backward(sum(mul(mul(out.zq_st, out.zq_st), w)));
    gz = z.grad();
  }
  auto u = vq::quantize_decomposed(cb, z.detach()).zq.detach().clone();
  u.set_requires_grad(true);
  {
    Tape tape;
    Tape::Scope scope(tape);
    backward(sum(mul(mul(u, u), w)));
  }
  const bool st_exact = gz == u.grad();

  const auto all16 = vq::enumerate_reconstructions(vq::codebook_init(2, 4, 8, 11));
  const std::set<std::vector<double>> distinct(all16.begin(), all16.end());
  const bool pass = trials >= 1000 && mismatches == 0 && st_exact && distinct.size() == 16;
  return {pass, fmt("%d brute-force trials, %d mismatching coordinates; straight-through %s; %zu distinct reconstructions",
                    trials, mismatches, st_exact ? "exact" : "NOT exact", distinct.size())};
}

// ---------------------------------------------------------------------------
// 9

Outcome at_measure(Context& ctx) {
  // Control: a second encoder with identical weights.
  auto control = train::clone_state(ctx.joint_run().result.best);
  auto twin = control.module("a", Role::Encoder);
  twin.language = "twin";
  for (auto& [name, t] : twin.params) t = t.clone();
  reg::register_module(control, twin);
  const auto a_test = ctx.ex.test_side("a");
  const auto ctl = eval::at_compatibility(control, "a", "twin", a_test, a_test);

  const auto& s = ctx.add_run().result.best;
  std::string detail = fmt("control a-t=%.2f", ctl.bleu_a_t);
  bool all_ordered = true;
  double sum_ae = 0.0, sum_tr = 0.0;
  for (const auto& [dec, enc] : std::vector<std::pair<std::string, std::string>>{{"a", "b"}, {"b", "a"}, {"a", "c"}, {"b", "c"}}) {
    const auto r = eval::at_compatibility(s, dec, enc, ctx.ex.test_side(dec), ctx.ex.test_side(enc));
    all_ordered = all_ordered && r.bleu_autoencode >= r.bleu_translate;
    sum_ae += r.bleu_autoencode;
    sum_tr += r.bleu_translate;
    detail += fmt("; d_%s/e_%s (%.2f, %.2f, %.2f)", dec.c_str(), enc.c_str(), r.bleu_autoencode, r.bleu_translate,
                  r.bleu_a_t);
  }
  return {ctl.bleu_a_t == 100.0 && all_ordered && sum_ae > sum_tr, detail};
}

// ---------------------------------------------------------------------------
// 10

Outcome oracles(Context& ctx) {
  // BLEU against hand-computed corpus statistics.
  const double eps = 1e-9;
  struct Pair {
    std::string h, r;
    double expected;
  };
  const std::vector<Pair> pairs{
      {"the cat sat", "the cat sat down", 100.0 * std::exp(1.0 - 4.0 / 3.0) * std::pow(eps, 0.25)},
      {"a a a a", "a b a c", 100.0 * std::pow(0.5 * (eps / 3) * (eps / 2) * eps, 0.25)},
      {"x y z w v u", "x y z w q u", 100.0 * std::pow((5.0 / 6) * (3.0 / 5) * (2.0 / 4) * (1.0 / 3), 0.25)},
  };
  double bleu_gap = 0.0;
  for (const auto& p : pairs)
    bleu_gap = std::max(bleu_gap, std::abs(eval::bleu(std::vector<std::string>{p.h}, std::vector<std::string>{p.r}) - p.expected));

  // BPE merge traces against exhaustive pair counting.
  int bpe_mismatch = 0;
  const std::vector<std::pair<std::vector<std::string>, std::size_t>> micro{
      {{"low", "lower", "newest", "widest"}, 10}, {{"abab", "baba", "abba", "aabb"}, 8}, {{"aaa", "aaa", "aa"}, 3}};
  for (const auto& [words, merges] : micro) {
    const auto m = tok::bpe_learn({tok::Words(words.begin(), words.end())}, merges);
    bpe_mismatch += m.merges() == imt::testing::oracle_merges(words, merges) ? 0 : 1;
  }

  // Checkpoint round trip, greedy decode token-identical for every pair.
  const auto& s = ctx.add_run().result.best;
  const auto path = fs::temp_directory_path() / fmt("imt_acceptance_%d.ckpt", static_cast<int>(::getpid()));
  reg::save_checkpoint(s, path);
  const auto loaded = reg::load_checkpoint(path);
  fs::remove(path);
  int decode_mismatch = 0;
  for (const auto& enc : {"a", "b", "c"})
    for (const auto& dec : {"a", "b"}) {
      const auto src = ctx.ex.test_side(enc);
      decode_mismatch += eval::translate_ids(reg::compose_pipeline(s, enc, dec), src) ==
                                 eval::translate_ids(reg::compose_pipeline(loaded, enc, dec), src)
                             ? 0
                             : 1;
    }
  const bool pass = bleu_gap <= 1e-6 && bpe_mismatch == 0 && decode_mismatch == 0;
  return {pass, fmt("BLEU max gap %.1e on 3 pairs; BPE traces %d/3 match; checkpoint greedy decode identical on %d/6 pairs",
                    bleu_gap, 3 - bpe_mismatch, 6 - decode_mismatch)};
}

// ---------------------------------------------------------------------------
// 11

Outcome determinism(Context& ctx) {
  const auto& first_joint = ctx.joint_run();
  const auto& first_add = ctx.add_run();
  progress("repeating the joint run");
  const auto again_joint = run_joint(ctx.ex, joint_training(1));
  progress("repeating the language addition");
  const auto again_add = run_add(ctx.ex, again_joint.result.best, add_training(2));
  const bool joint_same = again_joint.csv == first_joint.csv;
  const bool add_same = again_add.csv == first_add.csv;
  return {joint_same && add_same, fmt("joint metrics %s (%zu rows), addition metrics %s (%zu rows)",
                                      joint_same ? "identical" : "DIFFER", first_joint.csv.size(),
                                      add_same ? "identical" : "DIFFER", first_add.csv.size())};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  std::optional<std::string> report;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--report" && i + 1 < argc) report = argv[++i];
    else selected.insert(std::atoi(argv[i]));
  }
  if (selected.empty())
    for (int i = 1; i <= 11; ++i) selected.insert(i);

  Context ctx;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient integrity", [] { return gradient_integrity(); }},
      {"correlation distance algebra", [] { return correlation_algebra(); }},
      {"joint training convergence", [&] { return joint_convergence(ctx); }},
      {"interlingua distance trend", [&] { return interlingua_trend(ctx); }},
      {"incremental language addition", [&] { return incremental_addition(ctx); }},
      {"zero-shot composition", [&] { return zero_shot(ctx); }},
      {"distance ablation direction", [&] { return distance_ablation(ctx); }},
      {"DVQ correctness", [] { return dvq_correctness(); }},
      {"A-T compatibility measure", [&] { return at_measure(ctx); }},
      {"BLEU, BPE and checkpoint oracles", [&] { return oracles(ctx); }},
      {"determinism", [&] { return determinism(ctx); }},
  };

  std::FILE* report_file = report ? std::fopen(report->c_str(), "w") : nullptr;
  if (report && report_file == nullptr) {
    std::fprintf(stderr, "cannot write %s\n", report->c_str());
    return 2;
  }
  int failed = 0, errors = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
      ++errors;
    }
    failed += o.pass ? 0 : 1;
    const auto line = fmt("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fputs(line.c_str(), stdout);
    std::fflush(stdout);
    if (report_file) {
      std::fputs(line.c_str(), report_file);
      std::fflush(report_file);
    }
  }
  if (report_file) {
    std::fprintf(report_file, "%d of %zu criteria failed\n", failed, selected.size());
    std::fclose(report_file);
    return errors == 0 ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
