#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "bitref/corpus.hpp"
#include "bitref/dataset.hpp"
#include "bitref/errors.hpp"
#include "bitref/metrics.hpp"
#include "bitref/mine.hpp"
#include "bitref/model/checkpoint.hpp"
#include "bitref/model/decoder.hpp"
#include "bitref/model/trainer.hpp"
#include "bitref/pipeline/config.hpp"
#include "bitref/pipeline/experiment.hpp"
#include "bitref/pipeline/manifest.hpp"
#include "bitref/text.hpp"
#include "bitref/tokenize.hpp"

namespace bitref::cli {

namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::vector<std::pair<std::string, std::string>> overrides;
  std::vector<std::string> sets;
  bool paper_preset = false;
  std::string src_lang = "f";
  std::string tgt_lang = "e";
};

/// Flag whose value is applied to a config key after the config file.
void bind(CLI::App* sub, Common& c, const std::string& flag, std::string key, const std::string& desc) {
  sub->add_option_function<std::string>(
      flag, [&c, key](const std::string& v) { c.overrides.emplace_back(key, v); }, desc);
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "Pipeline config file (sectioned key = value)");
  bind(sub, c, "--seed", "seed", "Random seed");
  bind(sub, c, "--format", "format", "Output corpus format: tsv or jsonl");
  bind(sub, c, "--threads", "mine.threads", "Worker threads for retrieval");
  sub->add_option("--set", c.sets, "Override a config key, e.g. --set model.lr=1e-3");
  sub->add_option("--src-lang", c.src_lang, "Source language tag")->capture_default_str();
  sub->add_option("--tgt-lang", c.tgt_lang, "Target language tag")->capture_default_str();
}

PipelineConfig resolve(const Common& c, PipelineConfig base) {
  PipelineConfig cfg = c.config.empty() ? std::move(base) : load_pipeline_config(c.config, std::move(base));
  if (c.paper_preset) cfg.set("model.preset", "paper");
  for (const auto& [k, v] : c.overrides) cfg.set(k, v);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail(Errc::ConfigError, "--set expects key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

CorpusFormat out_format(const PipelineConfig& cfg) { return parse_corpus_format(cfg.format); }

Corpus read_corpus(const std::string& path, const Common& c, const std::string& producer) {
  if (!fs::exists(path)) {
    fail(Errc::MissingArtifact, path + " not found" + (producer.empty() ? "" : " (produced by `" + producer + "`)"));
  }
  return load_corpus(path, guess_corpus_format(path), c.src_lang, c.tgt_lang);
}

void require_file(const std::string& path, const std::string& producer) {
  if (!fs::exists(path)) fail(Errc::MissingArtifact, path + " not found (produced by `" + producer + "`)");
}

class ManifestWriter {
 public:
  ManifestWriter(std::string command, const std::vector<std::string>& args, const Common& c,
                 const PipelineConfig& cfg)
      : command_(std::move(command)), args_(args) {
    m_.config_hash = sha256_hex(cfg.to_text());
    m_.seed = cfg.seed;
    if (!c.config.empty()) input(c.config);
  }
  void input(const std::string& path) { m_.inputs.push_back(digest_file(path)); }
  void output(const std::string& path) { m_.outputs.push_back(digest_file(path)); }
  void write() {
    m_.command = command_;
    m_.args = args_;
    save_manifest(manifest_path_for(m_.outputs.front().path), m_);
  }

 private:
  std::string command_;
  std::vector<std::string> args_;
  RunManifest m_;
};

// generate ------------------------------------------------------------------

struct GenerateArgs {
  std::string out, clean;
  std::size_t pairs = 1000;
  bool score = false;
};

int cmd_generate(const GenerateArgs& a, const Common& c, const std::vector<std::string>& args,
                 std::ostream& out) {
  const PipelineConfig cfg = resolve(c, PipelineConfig{});
  SyntheticSpec spec;
  spec.n_pairs = a.pairs;
  spec.vocab_size = cfg.synthetic.vocab_size;
  spec.min_len = cfg.synthetic.min_len;
  spec.max_len = cfg.synthetic.max_len;
  spec.zipf = cfg.synthetic.zipf;
  spec.noise = cfg.noise;
  spec.seed = cfg.seed;
  SyntheticCorpus syn = gen_synthetic(spec);
  if (a.score) {
    EmbedderConfig ecfg;
    ecfg.dim = cfg.embed_dim;
    if (cfg.lexicon_pivot) ecfg.lexicon = toy_lexicon(spec.vocab_size);
    const Embedder embedder(ecfg);
    std::vector<Sentence> src, tgt;
    for (const auto& p : syn.noisy.pairs) {
      src.push_back(p.src);
      tgt.push_back(p.tgt);
    }
    const auto idx_s = build_index(src, embedder);
    const auto idx_t = build_index(tgt, embedder);
    const std::size_t k = std::min(cfg.k, syn.noisy.size());
    for (std::size_t i = 0; i < syn.noisy.size(); ++i) {
      syn.noisy.pairs[i].score = margin_score(idx_s.vector(i), idx_t.vector(i), idx_s, idx_t, k);
    }
  }
  syn.noisy.src_lang = syn.clean.src_lang = c.src_lang;
  syn.noisy.tgt_lang = syn.clean.tgt_lang = c.tgt_lang;
  for (auto* corpus : {&syn.noisy, &syn.clean}) {
    for (auto& p : corpus->pairs) {
      p.src.lang = c.src_lang;
      p.tgt.lang = c.tgt_lang;
    }
  }
  save_corpus(syn.noisy, a.out, out_format(cfg));
  ManifestWriter m("generate", args, c, cfg);
  m.output(a.out);
  if (!a.clean.empty()) {
    save_corpus(syn.clean, a.clean, out_format(cfg));
    m.output(a.clean);
  }
  m.write();
  const auto corrupted = std::count(syn.corrupted.begin(), syn.corrupted.end(), true);
  out << "pairs=" << syn.noisy.size() << "\ncorrupted=" << corrupted << "\n";
  return 0;
}

// split-pools ---------------------------------------------------------------

struct SplitArgs {
  std::string input, out_dir;
};

int cmd_split(const SplitArgs& a, const Common& c, const std::vector<std::string>& args,
              std::ostream& out) {
  const PipelineConfig cfg = resolve(c, PipelineConfig{});
  const Corpus corpus = read_corpus(a.input, c, "generate");
  const Pools pools = split_pools(corpus, cfg.low, cfg.high);
  const fs::path dir = a.out_dir.empty() ? fs::path(a.input).parent_path() : fs::path(a.out_dir);
  if (!dir.empty()) fs::create_directories(dir);
  const std::string ext = cfg.format == "jsonl" ? ".jsonl" : ".tsv";
  const std::string pa = (dir / ("a" + ext)).string(), pb = (dir / ("b" + ext)).string();
  save_corpus(pools.a, pa, out_format(cfg));
  save_corpus(pools.b, pb, out_format(cfg));
  ManifestWriter m("split-pools", args, c, cfg);
  m.input(a.input);
  m.output(pa);
  m.output(pb);
  m.write();
  out << "pool_a=" << pools.a.size() << "\npool_b=" << pools.b.size()
      << "\ndiscarded=" << pools.discarded << "\n";
  return 0;
}

// mine ----------------------------------------------------------------------

struct MineArgs {
  std::string input, out, src_emb, tgt_emb;
  std::vector<std::string> pools;
};

int cmd_mine(const MineArgs& a, const Common& c, const std::vector<std::string>& args,
             std::ostream& out) {
  const PipelineConfig cfg = resolve(c, PipelineConfig{});
  const Corpus corpus = read_corpus(a.input, c, "split-pools");
  ManifestWriter m("mine", args, c, cfg);
  m.input(a.input);
  std::vector<PairCandidates> cands;
  if (!a.src_emb.empty() || !a.tgt_emb.empty()) {
    if (a.src_emb.empty() || a.tgt_emb.empty()) {
      fail(Errc::ConfigError, "--src-embeddings and --tgt-embeddings go together");
    }
    if (!a.pools.empty()) fail(Errc::ConfigError, "--pool is not supported with precomputed embeddings");
    auto sv = load_embeddings(a.src_emb, cfg.embed_dim);
    auto tv = load_embeddings(a.tgt_emb, cfg.embed_dim);
    if (sv.size() != corpus.size() || tv.size() != corpus.size()) {
      fail(Errc::LengthMismatch, "embedding rows do not match corpus pairs");
    }
    std::vector<Sentence> s, t;
    for (const auto& p : corpus.pairs) {
      s.push_back(p.src);
      t.push_back(p.tgt);
    }
    const auto idx_s = build_index(sv, s);
    const auto idx_t = build_index(tv, t);
    cands = mine_candidates(corpus, sv, tv, idx_s, idx_t, cfg.k, cfg.threads);
    m.input(a.src_emb);
    m.input(a.tgt_emb);
  } else {
    EmbedderConfig ecfg;
    ecfg.dim = cfg.embed_dim;
    if (cfg.lexicon_pivot) ecfg.lexicon = toy_lexicon(cfg.synthetic.vocab_size);
    const Embedder embedder(ecfg);
    std::vector<Sentence> s, t;
    auto add = [&](const Corpus& src) {
      for (const auto& p : src.pairs) {
        s.push_back(p.src);
        t.push_back(p.tgt);
      }
    };
    add(corpus);
    for (const auto& p : a.pools) {
      add(read_corpus(p, c, "split-pools"));
      m.input(p);
    }
    cands = mine_candidates(corpus, build_index(s, embedder), build_index(t, embedder), embedder, cfg.k,
                            cfg.threads);
  }
  save_candidates(a.out, cands, c.src_lang, c.tgt_lang);
  m.output(a.out);
  m.write();
  out << "pairs=" << cands.size() << "\nk=" << cfg.k << "\n";
  return 0;
}

// build ---------------------------------------------------------------------

struct BuildArgs {
  std::string input, candidates, out_dir, bpe, vocab, dataset_format = "jsonl";
  std::vector<std::string> bpe_corpora;
  bool mt_only = false;
};

int cmd_build(const BuildArgs& a, const Common& c, const std::vector<std::string>& args,
              std::ostream& out) {
  const PipelineConfig cfg = resolve(c, PipelineConfig{});
  const Corpus corpus = read_corpus(a.input, c, "split-pools");
  ManifestWriter m("build", args, c, cfg);
  m.input(a.input);
  std::vector<PairCandidates> cands;
  if (!a.mt_only) {
    if (a.candidates.empty()) fail(Errc::ConfigError, "--candidates is required unless --mt-only");
    require_file(a.candidates, "mine");
    cands = load_candidates(a.candidates, c.src_lang, c.tgt_lang);
    m.input(a.candidates);
  }
  fs::create_directories(a.out_dir);
  const std::string bpe_path = (fs::path(a.out_dir) / "bpe.codes").string();
  const std::string vocab_path = (fs::path(a.out_dir) / "vocab.txt").string();

  BpeModel bpe;
  Vocab vocab;
  if (!a.bpe.empty()) {
    require_file(a.bpe, "build");
    bpe = BpeModel::load(a.bpe);
    m.input(a.bpe);
  }
  if (!a.vocab.empty()) {
    require_file(a.vocab, "build");
    vocab = Vocab::load(a.vocab);
    m.input(a.vocab);
  }
  if (a.bpe.empty() || a.vocab.empty()) {
    std::vector<std::string> sents = corpus.src_texts();
    for (auto& t : corpus.tgt_texts()) sents.push_back(std::move(t));
    for (const auto& p : a.bpe_corpora) {
      const Corpus extra = read_corpus(p, c, "split-pools");
      for (auto& t : extra.src_texts()) sents.push_back(std::move(t));
      for (auto& t : extra.tgt_texts()) sents.push_back(std::move(t));
      m.input(p);
    }
    if (a.bpe.empty()) bpe = learn_bpe(sents, cfg.merges);
    if (a.vocab.empty()) vocab = build_vocab(bpe, sents);
  }
  const SubwordCodec codec(bpe, vocab);

  DatasetOptions opts;
  opts.max_len = cfg.model.max_len;
  opts.dev_pairs = cfg.dev_pairs;
  opts.seed = cfg.seed;
  opts.dev_clean_only = cfg.dev_clean_only;
  opts.mt_only = a.mt_only;
  const BuiltDataset data = build_dataset(corpus, cands, codec, opts);
  const DatasetFormat dfmt = parse_dataset_format(a.dataset_format);
  const std::string data_path =
      (fs::path(a.out_dir) / (dfmt == DatasetFormat::Jsonl ? "dataset.jsonl" : "dataset.bin")).string();
  save_dataset(data_path, data.split, dfmt);
  bpe.save(bpe_path);
  vocab.save(vocab_path);
  m.output(data_path);
  m.output(bpe_path);
  m.output(vocab_path);
  m.write();
  out << "train=" << data.split.train.size() << "\ndev=" << data.split.dev.size()
      << "\nedit_examples=" << data.edit_examples << "\nmt_examples=" << data.mt_examples
      << "\ndropped_too_long=" << data.dropped_too_long << "\nvocab=" << vocab.size() << "\n";
  return 0;
}

// train ---------------------------------------------------------------------

struct TrainArgs {
  std::string dataset, bpe, vocab, out;
};

int cmd_train(const TrainArgs& a, const Common& c, const std::vector<std::string>& args,
              std::ostream& out, std::ostream& err) {
  const PipelineConfig cfg = resolve(c, PipelineConfig{});
  require_file(a.dataset, "build");
  require_file(a.bpe, "build");
  require_file(a.vocab, "build");
  const DatasetSplit split = load_dataset(a.dataset);
  SubwordCodec codec(BpeModel::load(a.bpe), Vocab::load(a.vocab));
  ModelConfig mc = cfg.model;
  mc.seed = cfg.seed;
  EditorModel model(mc, codec);
  model.init_params(mc.seed);
  const std::string log_path = a.out + ".log";
  std::ofstream log(log_path, std::ios::trunc);
  TrainOptions topts;
  topts.on_epoch = [&](const EpochLog& e) {
    const std::string line = format_epoch_log(e);
    log << line << "\n";
    err << line << "\n";
  };
  const TrainResult result = train(std::move(model), split, topts);
  log << "best_epoch=" << result.best.epoch << " dev_ppl=" << text::format_real(result.best.dev_ppl) << "\n";
  log.close();
  save_checkpoint(a.out, result.best);
  ManifestWriter m("train", args, c, cfg);
  m.input(a.dataset);
  m.input(a.bpe);
  m.input(a.vocab);
  m.output(a.out);
  m.output(log_path);
  m.write();
  out << "best_epoch=" << result.best.epoch << "\ndev_ppl=" << text::format_real(result.best.dev_ppl)
      << "\n";
  return 0;
}

// refine / backtranslate ----------------------------------------------------

struct DecodeArgs {
  std::string model, input, out;
};

int cmd_decode(const std::string& name, const DecodeArgs& a, const Common& c,
               const std::vector<std::string>& args, std::ostream& out) {
  const PipelineConfig cfg = resolve(c, PipelineConfig{});
  require_file(a.model, "train");
  const Checkpoint ckpt = load_checkpoint(a.model);
  const Corpus corpus = read_corpus(a.input, c, "split-pools");
  DecodeOptions opts;
  opts.beam = cfg.beam;
  opts.batch_size = cfg.decode_batch;
  RefineStats st;
  const Corpus result = name == "refine" ? refine_corpus(ckpt.model, corpus, opts, &st)
                                         : backtranslate_corpus(ckpt.model, corpus, opts, &st);
  save_corpus(result, a.out, out_format(cfg));
  ManifestWriter m(name, args, c, cfg);
  m.input(a.model);
  m.input(a.input);
  m.output(a.out);
  m.write();
  out << "pairs=" << result.size() << "\nreplaced_src=" << st.replaced_src
      << "\nreplaced_tgt=" << st.replaced_tgt << "\nfailures=" << st.failures
      << "\ntruncated=" << st.truncated << "\n";
  return 0;
}

// evaluate ------------------------------------------------------------------

struct EvaluateArgs {
  std::string model, input, out;
  bool whitespace = false;
};

int cmd_evaluate(const EvaluateArgs& a, const Common& c, const std::vector<std::string>& args,
                 std::ostream& out) {
  const PipelineConfig cfg = resolve(c, PipelineConfig{});
  require_file(a.model, "train");
  const Checkpoint ckpt = load_checkpoint(a.model);
  const Corpus test = read_corpus(a.input, c, "");
  DecodeOptions opts;
  opts.beam = cfg.beam;
  opts.batch_size = cfg.decode_batch;
  const auto hyps = translate(ckpt.model, test.src_texts(), opts);
  const auto refs = test.tgt_texts();
  auto tok = [&](const std::vector<std::string>& v) {
    if (a.whitespace) return tokenize_ws(v);
    std::vector<Tokens> t;
    for (const auto& s : v) t.push_back(apply_bpe(ckpt.model.codec().bpe(), s));
    return t;
  };
  Report rep;
  rep.add("bleu.tokens", std::string(a.whitespace ? "whitespace" : "bpe"));
  rep.merge("bleu", to_report(bleu(tok(hyps), tok(refs))));
  rep.merge("chrf", to_report(chrf(hyps, refs)));
  const std::string body = rep.to_key_values();
  out << body;
  if (!a.out.empty()) {
    std::ofstream(a.out, std::ios::trunc) << body;
    ManifestWriter m("evaluate", args, c, cfg);
    m.input(a.model);
    m.input(a.input);
    m.output(a.out);
    m.write();
  }
  return 0;
}

// analyze -------------------------------------------------------------------

struct AnalyzeArgs {
  std::string original, refined, out;
};

int cmd_analyze(const AnalyzeArgs& a, const Common& c, const std::vector<std::string>& args,
                std::ostream& out) {
  const PipelineConfig cfg = resolve(c, PipelineConfig{});
  const Corpus orig = read_corpus(a.original, c, "");
  const Corpus ref = read_corpus(a.refined, c, "refine");
  Report rep;
  rep.merge("edits", to_report(edited_fraction(orig, ref)));
  rep.merge("ter_labels.src", to_report(ter_corpus(ref.src_texts(), orig.src_texts())));
  rep.merge("ter_labels.tgt", to_report(ter_corpus(ref.tgt_texts(), orig.tgt_texts())));
  rep.merge("ttr.original.src", to_report(type_token_ratio(orig.src_texts())));
  rep.merge("ttr.original.tgt", to_report(type_token_ratio(orig.tgt_texts())));
  rep.merge("ttr.refined.src", to_report(type_token_ratio(ref.src_texts())));
  rep.merge("ttr.refined.tgt", to_report(type_token_ratio(ref.tgt_texts())));
  const std::string body =
      "# edits and TER-style labels (no shifts) on whitespace tokens of detokenized text\n" +
      rep.to_key_values();
  out << body;
  if (!a.out.empty()) {
    std::ofstream(a.out, std::ios::trunc) << body;
    ManifestWriter m("analyze", args, c, cfg);
    m.input(a.original);
    m.input(a.refined);
    m.output(a.out);
    m.write();
  }
  return 0;
}

// experiment ----------------------------------------------------------------

struct ExperimentArgs {
  std::string out_dir;
};

int cmd_experiment(const ExperimentArgs& a, const Common& c, const std::vector<std::string>& args,
                   std::ostream& out, std::ostream& err) {
  const PipelineConfig cfg = resolve(c, experiment_defaults());
  const fs::path dir = a.out_dir.empty() ? cfg.work_dir : fs::path(a.out_dir);
  const ExperimentResult res = run_experiment(cfg, dir, [&](std::string_view line) { err << line << "\n"; });
  out << format_experiment_table(res);
  ManifestWriter m("experiment", args, c, cfg);
  m.output((dir / "report.txt").string());
  for (const char* name : {"report.tsv", "editor.btxe"}) m.output((dir / name).string());
  const std::string ext = cfg.format == "jsonl" ? ".jsonl" : ".tsv";
  for (const char* name : {"scored", "pool_a", "pool_b", "test", "r_a", "r_b", "b_b"}) {
    m.output((dir / (std::string(name) + ext)).string());
  }
  m.write();
  return 0;
}

// rerun ---------------------------------------------------------------------

int cmd_rerun(const std::string& manifest_path, std::ostream& out, std::ostream& err) {
  require_file(manifest_path, "any subcommand");
  const RunManifest m = load_manifest(manifest_path);
  if (m.command == "rerun") fail(Errc::ManifestMismatch, "a rerun manifest cannot be rerun");
  verify_inputs(m);
  std::ostringstream sink;
  const int code = run(m.args, sink, err);
  if (code != 0) return code;
  const auto changed = changed_outputs(m);
  if (!changed.empty()) {
    std::string list;
    for (const auto& p : changed) list += " " + p;
    fail(Errc::ManifestMismatch, "outputs differ from the recorded run:" + list);
  }
  out << "identical=" << m.outputs.size() << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) { return run(args, std::cout, std::cerr); }

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Refine noisy bitexts by editing them with a trained sequence editor"};
  app.name("bitref");
  app.require_subcommand(1);

  Common common;
  std::function<int()> action;

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Generate a synthetic toy-language corpus");
  add_common(g, common);
  g->add_option("-o,--out", gen.out, "Noisy corpus output")->required();
  g->add_option("--clean", gen.clean, "Clean (uncorrupted) corpus output");
  g->add_option("--pairs", gen.pairs, "Number of pairs")->capture_default_str();
  g->add_flag("--score", gen.score, "Attach margin scores from the toy embedder");
  bind(g, common, "--vocab", "synthetic.vocab_size", "Toy vocabulary size");
  bind(g, common, "--min-len", "synthetic.min_len", "Minimum sentence length");
  bind(g, common, "--max-len", "synthetic.max_len", "Maximum sentence length");
  bind(g, common, "--zipf", "synthetic.zipf", "Zipf exponent of token frequencies");
  bind(g, common, "--p-drop", "noise.p_drop", "Token deletion probability");
  bind(g, common, "--p-swap", "noise.p_swap", "Adjacent swap probability");
  bind(g, common, "--p-replace", "noise.p_replace", "Token replacement probability");
  bind(g, common, "--p-misalign", "noise.p_misalign", "Misaligned pair fraction");
  bind(g, common, "--pair-rate", "noise.pair_rate", "Fraction of pairs eligible for noise");
  bind(g, common, "--k", "mine.k", "Neighbours in the margin denominator");
  g->callback([&] { action = [&] { return cmd_generate(gen, common, args, out); }; });

  SplitArgs split;
  auto* s = app.add_subcommand("split-pools", "Split a scored corpus into pools A and B");
  add_common(s, common);
  s->add_option("input", split.input, "Scored corpus")->required();
  s->add_option("--out-dir", split.out_dir, "Directory for a.tsv and b.tsv (default: input directory)");
  bind(s, common, "--low", "pools.low", "Scores at or below are discarded");
  bind(s, common, "--high", "pools.high", "Scores at or above go to pool A");
  s->callback([&] { action = [&] { return cmd_split(split, common, args, out); }; });

  MineArgs mine;
  auto* mi = app.add_subcommand("mine", "Retrieve k nearest candidates for both sides of every pair");
  add_common(mi, common);
  mi->add_option("input", mine.input, "Corpus whose pairs are queried")->required();
  mi->add_option("-o,--out", mine.out, "Candidates JSONL")->required();
  mi->add_option("--pool", mine.pools, "Additional corpora whose sides join the retrieval pools");
  mi->add_option("--src-embeddings", mine.src_emb, "Raw f32 source embeddings, one row per pair");
  mi->add_option("--tgt-embeddings", mine.tgt_emb, "Raw f32 target embeddings, one row per pair");
  bind(mi, common, "--k", "mine.k", "Candidates per side");
  bind(mi, common, "--dim", "mine.embed_dim", "Embedding dimension");
  mi->callback([&] { action = [&] { return cmd_mine(mine, common, args, out); }; });

  BuildArgs build;
  auto* b = app.add_subcommand("build", "Build editing and translation examples");
  add_common(b, common);
  b->add_option("input", build.input, "Seed corpus (pool A)")->required();
  b->add_option("--candidates", build.candidates, "Candidates from `mine`");
  b->add_option("--out-dir", build.out_dir, "Output directory")->required();
  b->add_option("--bpe", build.bpe, "Existing BPE codes (learned when absent)");
  b->add_option("--vocab", build.vocab, "Existing vocabulary (built when absent)");
  b->add_option("--bpe-corpus", build.bpe_corpora, "Extra corpora for BPE and vocabulary");
  b->add_option("--dataset-format", build.dataset_format, "jsonl or binary")->capture_default_str();
  b->add_flag("--mt-only", build.mt_only, "Translation examples only");
  b->add_flag_function(
      "--dev-clean-only", [&](std::int64_t) { common.overrides.emplace_back("data.dev_clean_only", "true"); },
      "Dev keeps only translation examples");
  bind(b, common, "--merges", "bpe.merges", "Number of BPE merges");
  bind(b, common, "--dev-pairs", "data.dev_pairs", "Pairs held out for dev");
  bind(b, common, "--max-len", "model.max_len", "Maximum sequence length in subwords");
  b->callback([&] { action = [&] { return cmd_build(build, common, args, out); }; });

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the editor (or a translation-only model)");
  add_common(t, common);
  t->add_option("dataset", tr.dataset, "Dataset from `build`")->required();
  t->add_option("--bpe", tr.bpe, "BPE codes from `build`")->required();
  t->add_option("--vocab", tr.vocab, "Vocabulary from `build`")->required();
  t->add_option("-o,--out", tr.out, "Checkpoint path")->required();
  t->add_flag("--paper-preset", common.paper_preset, "Full-size transformer settings");
  bind(t, common, "--dim", "model.dim", "Model dimension");
  bind(t, common, "--epochs", "model.max_epochs", "Training epochs");
  t->callback([&] { action = [&] { return cmd_train(tr, common, args, out, err); }; });

  DecodeArgs ref;
  auto* r = app.add_subcommand("refine", "Rewrite a corpus with the editor: r(c)");
  add_common(r, common);
  r->add_option("input", ref.input, "Corpus to refine")->required();
  r->add_option("--model", ref.model, "Editor checkpoint")->required();
  r->add_option("-o,--out", ref.out, "Refined corpus")->required();
  bind(r, common, "--beam", "decode.beam", "Beam size (1 = greedy)");
  r->callback([&] { action = [&] { return cmd_decode("refine", ref, common, args, out); }; });

  DecodeArgs bt;
  auto* bk = app.add_subcommand("backtranslate", "Regenerate sources from targets: b(c)");
  add_common(bk, common);
  bk->add_option("input", bt.input, "Corpus")->required();
  bk->add_option("--model", bt.model, "Translation-only checkpoint")->required();
  bk->add_option("-o,--out", bt.out, "Output corpus")->required();
  bind(bk, common, "--beam", "decode.beam", "Beam size (1 = greedy)");
  bk->callback([&] { action = [&] { return cmd_decode("backtranslate", bt, common, args, out); }; });

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Translate a test set f -> e and report BLEU and chrF");
  add_common(e, common);
  e->add_option("input", ev.input, "Test corpus")->required();
  e->add_option("--model", ev.model, "Checkpoint")->required();
  e->add_option("-o,--out", ev.out, "Report file");
  e->add_flag("--whitespace", ev.whitespace, "Score BLEU on whitespace tokens instead of BPE pieces");
  bind(e, common, "--beam", "decode.beam", "Beam size (1 = greedy)");
  e->callback([&] { action = [&] { return cmd_evaluate(ev, common, args, out); }; });

  AnalyzeArgs an;
  auto* a = app.add_subcommand("analyze", "Edit fractions, TER-style labels and type/token ratios");
  add_common(a, common);
  a->add_option("original", an.original, "Original corpus")->required();
  a->add_option("refined", an.refined, "Refined corpus")->required();
  a->add_option("-o,--out", an.out, "Report file");
  a->callback([&] { action = [&] { return cmd_analyze(an, common, args, out); }; });

  ExperimentArgs ex;
  auto* x = app.add_subcommand("experiment", "Run the synthetic end-to-end comparison");
  add_common(x, common);
  x->add_option("--out-dir", ex.out_dir, "Artifact directory (default: paths.work_dir)");
  x->add_flag("--paper-preset", common.paper_preset, "Full-size transformer settings");
  x->add_flag_function(
      "--dev-clean-only", [&](std::int64_t) { common.overrides.emplace_back("data.dev_clean_only", "true"); },
      "Dev keeps only translation examples");
  bind(x, common, "--low", "pools.low", "Pool B lower bound");
  bind(x, common, "--high", "pools.high", "Pool A threshold");
  bind(x, common, "--k", "mine.k", "Candidates per side");
  bind(x, common, "--merges", "bpe.merges", "Number of BPE merges");
  bind(x, common, "--dim", "model.dim", "Model dimension");
  bind(x, common, "--beam", "decode.beam", "Beam size (1 = greedy)");
  x->callback([&] { action = [&] { return cmd_experiment(ex, common, args, out, err); }; });

  std::string manifest;
  auto* rr = app.add_subcommand("rerun", "Rerun a subcommand from its manifest and compare outputs");
  rr->add_option("manifest", manifest, "Run manifest (*.manifest.json)")->required();
  rr->callback([&] { action = [&] { return cmd_rerun(manifest, out, err); }; });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& pe) {
    if (pe.get_exit_code() == 0) {
      out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
      return 0;
    }
    err << "error: " << pe.what() << "\n";
    return 2;
  }

  try {
    return action();
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error: IoError: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace bitref::cli
