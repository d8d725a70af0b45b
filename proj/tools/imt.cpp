// Command-line front end: corpus synthesis, BPE, training schedules,
// translation and evaluation.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "imt/error.hpp"
#include "imt/evaluation.hpp"
#include "imt/registry.hpp"
#include "imt/tokenizer.hpp"
#include "imt/training.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace imt;
using reg::Role;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<data::TokenIds> segment_file(const fs::path& path, const tok::SubwordModel& model) {
  std::vector<data::TokenIds> out;
  for (const auto& line : data::read_lines(path)) {
    auto words = tok::preprocess_line(line);
    if (words) out.push_back(tok::bpe_apply(model, *words));
  }
  return out;
}

std::vector<data::ParallelBatch> with_fingerprints(std::vector<data::ParallelBatch> batches, std::uint32_t src,
                                                   std::uint32_t tgt) {
  for (auto& b : batches) {
    b.src_vocab = src;
    b.tgt_vocab = tgt;
  }
  return batches;
}

fs::path prepare_run_dir(const cli::RunConfig& rc) {
  const auto dir = fs::path(rc.get("runs_dir")) / rc.get("name");
  fs::create_directories(dir);
  return dir;
}

void print_summary(const train::TrainResult& r, const fs::path& dir) {
  std::printf("steps: %zu%s\n", r.history.size(), r.early_stopped ? " (early stop)" : "");
  std::printf("best dev loss: %.6f at step %lld\n", r.best_dev_loss, static_cast<long long>(r.best_step));
  std::printf("run dir: %s\n", dir.string().c_str());
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  fs::path out_dir;
  fs::path spec_file;
  std::size_t train = 5000, dev = 500, test = 200;
  std::optional<std::uint64_t> seed;
};

int run_synth(const SynthArgs& a) {
  data::SyntheticTaskSpec spec;
  if (!a.spec_file.empty()) {
    std::ifstream in(a.spec_file);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + a.spec_file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    spec = data::SyntheticTaskSpec::from_text(ss.str());
  }
  if (const char* env = std::getenv("IMT_SEED"); env != nullptr && *env != '\0') spec.seed = std::stoull(env);
  if (a.seed) spec.seed = *a.seed;
  fs::create_directories(a.out_dir);
  const auto corpus = data::synth_generate(spec, a.train + a.dev + a.test);
  const std::pair<std::string, std::pair<std::size_t, std::size_t>> splits[] = {
      {"train", {0, a.train}}, {"dev", {a.train, a.train + a.dev}}, {"test", {a.train + a.dev, corpus.size()}}};
  for (std::size_t l = 0; l < corpus.languages.size(); ++l) {
    for (const auto& [split, range] : splits) {
      std::vector<std::string> lines;
      for (std::size_t i = range.first; i < range.second; ++i)
        lines.push_back(data::render_text(corpus.languages[l], corpus.rendered[l][i]));
      data::write_lines(a.out_dir / (split + "." + corpus.languages[l]), lines);
    }
  }
  write_text(a.out_dir / "spec.txt", spec.to_text());
  std::printf("wrote %zu sentences x %zu languages to %s\n", corpus.size(), corpus.languages.size(),
              a.out_dir.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// bpe

int run_bpe_learn(const std::vector<fs::path>& inputs, std::size_t merges, const fs::path& out, const std::string& tag) {
  std::vector<tok::Words> corpus;
  for (const auto& in : inputs)
    for (const auto& line : data::read_lines(in))
      if (auto w = tok::preprocess_line(line)) corpus.push_back(std::move(*w));
  if (corpus.empty()) throw Error(ErrorCode::EmptyCorpus, "no usable lines in the input");
  auto model = tok::bpe_learn(corpus, merges);
  model.language_tag = tag;
  model.save(out);
  // Parse back so that a written model is always loadable.
  if (tok::SubwordModel::load(out).to_text() != model.to_text())
    throw Error(ErrorCode::IoFailure, "model file did not round-trip: " + out.string());
  std::printf("%zu merges, %d symbols -> %s\n", model.merges().size(), model.size(), out.string().c_str());
  return 0;
}

int run_bpe_apply(const fs::path& model_path, const fs::path& in, const fs::path& out) {
  const auto model = tok::SubwordModel::load(model_path);
  std::vector<std::string> lines;
  for (const auto& line : data::read_lines(in)) {
    std::string seg;
    if (auto words = tok::preprocess_line(line)) {
      const auto ids = tok::bpe_apply(model, *words);
      for (std::size_t i = 1; i + 1 < ids.size(); ++i) seg += (i > 1 ? " " : "") + model.symbol(ids[i]);
    }
    lines.push_back(seg);
  }
  data::write_lines(out, lines);
  return 0;
}

int run_bpe_decode(const fs::path& model_path, const fs::path& in, const fs::path& out) {
  const auto model = tok::SubwordModel::load(model_path);
  std::vector<std::string> lines;
  for (const auto& line : data::read_lines(in)) {
    std::istringstream is(line);
    std::vector<std::int32_t> ids;
    std::string sym;
    while (is >> sym) ids.push_back(model.id(sym));
    lines.push_back(tok::bpe_decode(model, ids));
  }
  data::write_lines(out, lines);
  return 0;
}

// ---------------------------------------------------------------------------
// training commands

cli::RunConfig joint_config() {
  return cli::RunConfig({"src_lang", "tgt_lang", "train_src", "train_tgt", "dev_src", "dev_tgt", "src_bpe", "tgt_bpe"},
                        {{"max_words", "80"}});
}

cli::RunConfig add_config() {
  return cli::RunConfig({"checkpoint", "new_lang", "shared_lang", "train_new", "train_shared", "dev_new", "dev_shared",
                         "new_bpe", "shared_bpe"},
                        {{"max_words", "80"}});
}

void resolve(cli::RunConfig& rc, const std::string& config_file, const std::vector<std::string>& sets) {
  if (!config_file.empty()) rc.load_file(config_file);
  for (const auto& s : sets) rc.override_with(s);
  rc.apply_seed_env();
}

int run_train_joint(cli::RunConfig& rc) {
  const auto x = rc.get("src_lang");
  const auto y = rc.get("tgt_lang");
  if (x == y) throw Error(ErrorCode::InvalidConfig, "joint training needs two different languages");
  const auto cfg = rc.training_config();
  const auto bpe_x = tok::SubwordModel::load(rc.path("src_bpe"));
  const auto bpe_y = tok::SubwordModel::load(rc.path("tgt_bpe"));
  const auto max_words = static_cast<std::size_t>(std::stoul(rc.get("max_words")));
  auto train_set = data::load_parallel(rc.path("train_src"), rc.path("train_tgt"), bpe_x, bpe_y, max_words);
  auto dev_set = data::load_parallel(rc.path("dev_src"), rc.path("dev_tgt"), bpe_x, bpe_y, max_words);
  if (dev_set.examples.empty()) throw Error(ErrorCode::EmptyDevSet, "dev corpus has no usable pairs");

  reg::SystemState state;
  const auto s = cfg.seed * 16;
  reg::register_module(state, reg::make_module(x, Role::Encoder, rc.model_config(bpe_x.size()), s + 1, bpe_x.fingerprint()));
  reg::register_module(state, reg::make_module(x, Role::Decoder, rc.model_config(bpe_x.size()), s + 2, bpe_x.fingerprint()));
  reg::register_module(state, reg::make_module(y, Role::Encoder, rc.model_config(bpe_y.size()), s + 3, bpe_y.fingerprint()));
  reg::register_module(state, reg::make_module(y, Role::Decoder, rc.model_config(bpe_y.size()), s + 4, bpe_y.fingerprint()));
  if (cfg.dvq) state.codebooks = vq::codebook_init(cfg.dvq_tables, cfg.dvq_codes, rc.model_config(bpe_x.size()).model_dim, s + 5, cfg.dvq_beta);

  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  data::BatchStream stream(std::move(train_set.examples), batch, cfg.seed, {x, y});
  stream.set_vocab_fingerprints(bpe_x.fingerprint(), bpe_y.fingerprint());
  const auto dev = with_fingerprints(data::make_batches(dev_set.examples, batch, cfg.seed, {x, y}), bpe_x.fingerprint(),
                                     bpe_y.fingerprint());

  const auto dir = prepare_run_dir(rc);
  write_text(dir / "config.txt", rc.to_text());
  bpe_x.save(dir / ("vocab." + x + ".bpe"));
  bpe_y.save(dir / ("vocab." + y + ".bpe"));

  std::mt19937_64 rng(cfg.seed);
  train::AdamState adam;
  train::MetricsLog log(dir / "metrics.csv");
  auto result = train::train_loop(
      state, stream,
      [&] { return train::mean_dev_loss(dev, [&](const data::ParallelBatch& b) { return train::joint_eval(state, b, cfg); }); },
      [&](const data::ParallelBatch& b) { return train::joint_train_step(state, b, cfg, adam, &rng); }, cfg, &log);
  reg::save_checkpoint(result.best, dir / "model.ckpt");
  print_summary(result, dir);
  return 0;
}

int run_add_language(cli::RunConfig& rc) {
  const auto z = rc.get("new_lang");
  const auto x = rc.get("shared_lang");
  const auto cfg = rc.training_config();
  auto state = reg::load_checkpoint(rc.path("checkpoint"));
  const auto bpe_z = tok::SubwordModel::load(rc.path("new_bpe"));
  const auto bpe_x = tok::SubwordModel::load(rc.path("shared_bpe"));

  const auto& dec = state.module(x, Role::Decoder);
  if (dec.vocab_fingerprint != 0 && dec.vocab_fingerprint != bpe_x.fingerprint()) {
    throw Error(ErrorCode::VocabFingerprintMismatch,
                "shared_bpe is not the vocabulary the '" + x + "' decoder was trained with; pass the vocab." + x +
                    ".bpe file saved in the original run directory");
  }
  if (state.has(z, Role::Encoder)) throw Error(ErrorCode::DuplicateModule, "'" + z + "' already has an encoder");

  reg::set_frozen(state, x, Role::Decoder, true);
  const auto frozen_digest = reg::parameter_digest(state.module(x, Role::Decoder));
  // The new encoder follows the architecture of the frozen decoder.
  auto enc_cfg = dec.config;
  enc_cfg.vocab_size = bpe_z.size();
  enc_cfg.dropout = rc.model_config(bpe_z.size()).dropout;
  reg::register_module(state, reg::make_module(z, Role::Encoder, enc_cfg, cfg.seed * 16 + 7, bpe_z.fingerprint()));

  const auto max_words = static_cast<std::size_t>(std::stoul(rc.get("max_words")));
  auto train_set = data::load_parallel(rc.path("train_new"), rc.path("train_shared"), bpe_z, bpe_x, max_words);
  auto dev_set = data::load_parallel(rc.path("dev_new"), rc.path("dev_shared"), bpe_z, bpe_x, max_words);
  if (dev_set.examples.empty()) throw Error(ErrorCode::EmptyDevSet, "dev corpus has no usable pairs");
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  data::BatchStream stream(std::move(train_set.examples), batch, cfg.seed, {z, x});
  stream.set_vocab_fingerprints(bpe_z.fingerprint(), bpe_x.fingerprint());
  const auto dev = with_fingerprints(data::make_batches(dev_set.examples, batch, cfg.seed, {z, x}), bpe_z.fingerprint(),
                                     bpe_x.fingerprint());

  const auto dir = prepare_run_dir(rc);
  write_text(dir / "config.txt", rc.to_text());
  bpe_z.save(dir / ("vocab." + z + ".bpe"));
  bpe_x.save(dir / ("vocab." + x + ".bpe"));

  std::mt19937_64 rng(cfg.seed);
  train::AdamState adam;
  train::MetricsLog log(dir / "metrics.csv");
  auto result = train::train_loop(
      state, stream,
      [&] {
        return train::mean_dev_loss(dev, [&](const data::ParallelBatch& b) { return train::add_language_eval(state, b, cfg); });
      },
      [&](const data::ParallelBatch& b) { return train::add_language_train_step(state, b, cfg, adam, &rng); }, cfg, &log);

  const bool unchanged = reg::parameter_digest(result.best.module(x, Role::Decoder)) == frozen_digest &&
                         reg::parameter_digest(state.module(x, Role::Decoder)) == frozen_digest;
  reg::save_checkpoint(result.best, dir / "model.ckpt");
  print_summary(result, dir);
  std::printf("modules: %zu\n", result.best.modules.size());
  std::printf("frozen: %s\n", unchanged ? "unchanged" : "CHANGED");
  return unchanged ? 0 : 1;
}

// ---------------------------------------------------------------------------
// translate / evaluate

struct TranslateArgs {
  fs::path checkpoint, src_bpe, tgt_bpe, input, output, reference;
  std::string src, tgt;
};

int run_translate(const TranslateArgs& a) {
  const auto state = reg::load_checkpoint(a.checkpoint);
  const auto src_model = tok::SubwordModel::load(a.src_bpe);
  const auto tgt_model = tok::SubwordModel::load(a.tgt_bpe);
  const auto pipeline = reg::compose_pipeline(state, a.src, a.tgt, src_model.fingerprint(), tgt_model.fingerprint());
  std::optional<fs::path> ref;
  if (!a.reference.empty()) ref = a.reference;
  const auto r = eval::translate_file(pipeline, src_model, tgt_model, a.input, a.output, ref);
  std::printf("translated %zu lines %s -> %s\n", r.lines.size(), a.src.c_str(), a.tgt.c_str());
  if (r.bleu) std::printf("bleu: %.4f\n", *r.bleu);
  return 0;
}

int run_eval_bleu(const fs::path& hyp, const fs::path& ref) {
  std::printf("%.4f\n", eval::bleu(data::read_lines(hyp), data::read_lines(ref)));
  return 0;
}

struct CompatArgs {
  fs::path checkpoint, a_input, b_input, a_bpe, b_bpe;
  std::string a, b;
};

int run_eval_compat(const CompatArgs& c) {
  const auto state = reg::load_checkpoint(c.checkpoint);
  const auto ma = tok::SubwordModel::load(c.a_bpe);
  const auto mb = tok::SubwordModel::load(c.b_bpe);
  const auto la = data::read_lines(c.a_input);
  const auto lb = data::read_lines(c.b_input);
  if (la.size() != lb.size()) throw Error(ErrorCode::LineCountMismatch, "A and B files differ in line count");
  std::vector<data::TokenIds> sa, sb;
  for (std::size_t i = 0; i < la.size(); ++i) {
    auto wa = tok::preprocess_line(la[i]);
    auto wb = tok::preprocess_line(lb[i]);
    if (!wa || !wb) continue;
    sa.push_back(tok::bpe_apply(ma, *wa));
    sb.push_back(tok::bpe_apply(mb, *wb));
  }
  const auto r = eval::at_compatibility(state, c.a, c.b, sa, sb,
                                        [&](std::span<const std::int32_t> ids) { return tok::bpe_decode(ma, ids); });
  std::printf("decoder %s: autoencode %.4f translate %.4f a-t %.4f\n", r.decoder_language.c_str(), r.bleu_autoencode,
              r.bleu_translate, r.bleu_a_t);
  return 0;
}

struct ExportArgs {
  fs::path checkpoint, output;
  std::string langs, inputs, bpes;
};

int run_eval_export(const ExportArgs& e) {
  const auto state = reg::load_checkpoint(e.checkpoint);
  const auto langs = split_list(e.langs);
  const auto inputs = split_list(e.inputs);
  const auto bpes = split_list(e.bpes);
  if (inputs.size() != langs.size() || bpes.size() != langs.size())
    throw Error(ErrorCode::LengthMismatch, "--langs, --inputs and --bpe need the same number of entries");
  std::vector<std::vector<data::TokenIds>> sents;
  for (std::size_t k = 0; k < langs.size(); ++k) sents.push_back(segment_file(inputs[k], tok::SubwordModel::load(bpes[k])));
  const auto n = eval::export_representations(state, langs, sents, e.output);
  std::printf("records: %zu\n", n);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Per-language encoder/decoder translation modules with a shared interlingua"};
  app.require_subcommand(1);

  SynthArgs synth;
  std::uint64_t synth_seed = 0;
  auto* c_synth = app.add_subcommand("synth", "Generate a multi-way synthetic corpus");
  c_synth->add_option("--out", synth.out_dir, "Output directory")->required();
  c_synth->add_option("--spec", synth.spec_file, "Task spec file (key = value)");
  c_synth->add_option("--train", synth.train, "Training sentences");
  c_synth->add_option("--dev", synth.dev, "Dev sentences");
  c_synth->add_option("--test", synth.test, "Test sentences");
  auto* o_synth_seed = c_synth->add_option("--seed", synth_seed, "Generator seed");

  auto* c_bpe = app.add_subcommand("bpe", "Learn, apply or decode subword models");
  c_bpe->require_subcommand(1);
  std::vector<fs::path> learn_inputs;
  std::size_t merges = 1000;
  fs::path bpe_out, bpe_model, bpe_in;
  std::string tag;
  auto* c_learn = c_bpe->add_subcommand("learn", "Learn merges from text files");
  c_learn->add_option("--input", learn_inputs, "Training text files")->required()->check(CLI::ExistingFile);
  c_learn->add_option("--merges", merges, "Number of merges");
  c_learn->add_option("--output", bpe_out, "Model file")->required();
  c_learn->add_option("--lang", tag, "Language tag");
  auto* c_apply = c_bpe->add_subcommand("apply", "Segment a text file into subword symbols");
  auto* c_decode = c_bpe->add_subcommand("decode", "Join subword symbols back into words");
  for (auto* c : {c_apply, c_decode}) {
    c->add_option("--model", bpe_model, "Model file")->required()->check(CLI::ExistingFile);
    c->add_option("--input", bpe_in, "Input file")->required()->check(CLI::ExistingFile);
    c->add_option("--output", bpe_out, "Output file")->required();
  }

  std::string config_file;
  std::vector<std::string> sets;
  std::string name, distance, seed_flag, max_steps;
  auto add_run_options = [&](CLI::App* c) {
    c->add_option("--config", config_file, "Config file (key = value)")->check(CLI::ExistingFile);
    c->add_option("--set", sets, "Override: key=value (repeatable)");
    c->add_option("--name", name, "Run name under runs_dir");
    c->add_option("--distance", distance, "corr|max|l1|l2|none");
    c->add_option("--seed", seed_flag, "Seed");
    c->add_option("--max-steps", max_steps, "Step budget");
  };
  auto* c_joint = app.add_subcommand("train-joint", "Joint training of two languages");
  add_run_options(c_joint);
  auto* c_add = app.add_subcommand("add-language", "Train a new encoder against a frozen decoder");
  add_run_options(c_add);

  TranslateArgs tr;
  auto* c_tr = app.add_subcommand("translate", "Translate a file with any encoder/decoder pair");
  c_tr->add_option("--checkpoint", tr.checkpoint)->required()->check(CLI::ExistingFile);
  c_tr->add_option("--src", tr.src, "Source language")->required();
  c_tr->add_option("--tgt", tr.tgt, "Target language")->required();
  c_tr->add_option("--src-bpe", tr.src_bpe)->required()->check(CLI::ExistingFile);
  c_tr->add_option("--tgt-bpe", tr.tgt_bpe)->required()->check(CLI::ExistingFile);
  c_tr->add_option("--input", tr.input)->required();
  c_tr->add_option("--output", tr.output)->required();
  c_tr->add_option("--reference", tr.reference, "Reference file for BLEU");

  auto* c_eval = app.add_subcommand("evaluate", "BLEU, A-T compatibility or representation export");
  c_eval->require_subcommand(1);
  fs::path hyp, ref;
  auto* c_bleu = c_eval->add_subcommand("bleu", "Corpus BLEU of two files");
  c_bleu->add_option("--hyp", hyp)->required()->check(CLI::ExistingFile);
  c_bleu->add_option("--ref", ref)->required()->check(CLI::ExistingFile);
  CompatArgs ca;
  auto* c_compat = c_eval->add_subcommand("compat", "A-T measure for decoder A");
  c_compat->add_option("--checkpoint", ca.checkpoint)->required()->check(CLI::ExistingFile);
  c_compat->add_option("--a", ca.a, "Decoder language")->required();
  c_compat->add_option("--b", ca.b, "Other encoder language")->required();
  c_compat->add_option("--a-input", ca.a_input)->required()->check(CLI::ExistingFile);
  c_compat->add_option("--b-input", ca.b_input)->required()->check(CLI::ExistingFile);
  c_compat->add_option("--a-bpe", ca.a_bpe)->required()->check(CLI::ExistingFile);
  c_compat->add_option("--b-bpe", ca.b_bpe)->required()->check(CLI::ExistingFile);
  ExportArgs ex;
  auto* c_export = c_eval->add_subcommand("export", "Pooled encoder outputs as CSV");
  c_export->add_option("--checkpoint", ex.checkpoint)->required()->check(CLI::ExistingFile);
  c_export->add_option("--langs", ex.langs, "Comma-separated languages")->required();
  c_export->add_option("--inputs", ex.inputs, "Comma-separated text files")->required();
  c_export->add_option("--bpe", ex.bpes, "Comma-separated subword models")->required();
  c_export->add_option("--output", ex.output)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_synth->parsed()) {
      if (o_synth_seed->count()) synth.seed = synth_seed;
      return run_synth(synth);
    }
    if (c_learn->parsed()) return run_bpe_learn(learn_inputs, merges, bpe_out, tag);
    if (c_apply->parsed()) return run_bpe_apply(bpe_model, bpe_in, bpe_out);
    if (c_decode->parsed()) return run_bpe_decode(bpe_model, bpe_in, bpe_out);
    if (c_joint->parsed() || c_add->parsed()) {
      auto rc = c_joint->parsed() ? joint_config() : add_config();
      resolve(rc, config_file, sets);
      if (!name.empty()) rc.override_with("name", name);
      if (!distance.empty()) rc.override_with("distance", distance);
      if (!max_steps.empty()) rc.override_with("max_steps", max_steps);
      if (!seed_flag.empty()) rc.override_with("seed", seed_flag);
      return c_joint->parsed() ? run_train_joint(rc) : run_add_language(rc);
    }
    if (c_tr->parsed()) return run_translate(tr);
    if (c_bleu->parsed()) return run_eval_bleu(hyp, ref);
    if (c_compat->parsed()) return run_eval_compat(ca);
    if (c_export->parsed()) return run_eval_export(ex);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
