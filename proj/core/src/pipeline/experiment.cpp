#include "bitref/pipeline/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "bitref/dataset.hpp"
#include "bitref/errors.hpp"
#include "bitref/mine.hpp"
#include "bitref/model/checkpoint.hpp"
#include "bitref/model/decoder.hpp"
#include "bitref/model/trainer.hpp"
#include "bitref/random.hpp"
#include "bitref/text.hpp"
#include "bitref/tokenize.hpp"

namespace bitref {

const ExperimentRow& ExperimentResult::row(std::string_view system) const {
  for (const auto& r : rows) {
    if (r.system == system) return r;
  }
  fail(Errc::InvalidArgument, "no row " + std::string(system));
}

namespace {

enum Stream : std::uint64_t {
  kPoolA = 1, kPoolB, kTest, kEditor, kSplit, kNmtA, kNmtAB, kNmtABb, kNmtABr
};

/// Rethrows with the stage name prepended.
template <class F>
auto stage(std::string_view name, const LogFn& log, F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  if (log) log(std::string("stage ") + std::string(name));
  try {
    auto out = f();
    if (log) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      char buf[64];
      std::snprintf(buf, sizeof buf, "  done in %.1fs", s);
      log(buf);
    }
    return out;
  } catch (const Error& e) {
    throw Error(e.code(), std::string(name) + ": " + e.detail(), e.index());
  }
}

Corpus concat(const Corpus& a, const Corpus& b) {
  Corpus out = a.without_scores();
  out.append(b.without_scores());
  return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Scores every pair by its margin, then maps pool A into [high, high + 0.01)
/// and pool B into (low, high) so thresholding recovers the generated pools.
Corpus score_pools(const Corpus& a, const Corpus& b, const PipelineConfig& cfg,
                   const Embedder& embedder) {
  Corpus all = concat(a, b);
  const auto idx_src = build_index([&] {
    std::vector<Sentence> s;
    for (const auto& p : all.pairs) s.push_back(p.src);
    return s;
  }(), embedder);
  const auto idx_tgt = build_index([&] {
    std::vector<Sentence> s;
    for (const auto& p : all.pairs) s.push_back(p.tgt);
    return s;
  }(), embedder);
  const std::size_t k = std::min(cfg.k, all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    const double m = margin_score(idx_src.vector(i), idx_tgt.vector(i), idx_src, idx_tgt, k);
    const double unit = sigmoid(4.0 * (m - 1.0));
    if (i < a.size()) {
      all.pairs[i].score = cfg.high + 0.01 * unit;
    } else {
      all.pairs[i].score = cfg.low + (cfg.high - cfg.low) * (0.05 + 0.9 * unit);
    }
  }
  return all;
}

std::vector<std::string> all_sentences(const Corpus& c) {
  std::vector<std::string> out = c.src_texts();
  for (auto& t : c.tgt_texts()) out.push_back(std::move(t));
  return out;
}

struct SystemOutcome {
  EditorModel model;
  std::size_t epochs = 0;
  double dev_ppl = 0.0;
};

SystemOutcome train_system(const Corpus& corpus, const std::vector<PairCandidates>& cands,
                           const SubwordCodec& codec, const PipelineConfig& cfg, bool mt_only,
                           std::size_t epochs, std::uint64_t seed, const LogFn& log,
                           Report& details, const std::string& tag) {
  DatasetOptions opts;
  opts.max_len = cfg.model.max_len;
  opts.dev_pairs = std::min(cfg.dev_pairs, corpus.size() / 10);
  opts.seed = derive_seed(seed, kSplit);
  opts.dev_clean_only = cfg.dev_clean_only;
  opts.mt_only = mt_only;
  const BuiltDataset data = build_dataset(corpus, cands, codec, opts);

  ModelConfig mc = cfg.model;
  mc.seed = seed;
  mc.max_epochs = epochs;
  EditorModel model(mc, codec);
  model.init_params(seed);
  TrainOptions topts;
  if (log) {
    topts.on_epoch = [&](const EpochLog& e) { log("  " + tag + " " + format_epoch_log(e)); };
  }
  TrainResult tr = train(std::move(model), data.split, topts);

  details.add(tag + ".train_examples", data.split.train.size());
  details.add(tag + ".dev_examples", data.split.dev.size());
  details.add(tag + ".dropped_too_long", data.dropped_too_long);
  details.add(tag + ".best_epoch", tr.best.epoch);
  details.add(tag + ".dev_ppl", tr.best.dev_ppl);
  return SystemOutcome{std::move(tr.best.model), tr.best.epoch, tr.best.dev_ppl};
}

double pct(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

bool satisfies_rule(const BitextPair& p) { return toy_translate(p.src.text) == p.tgt.text; }

}  // namespace

ExperimentResult run_experiment(const PipelineConfig& cfg, const std::filesystem::path& out_dir,
                                const LogFn& log) {
  cfg.validate();
  const auto fmt = parse_corpus_format(cfg.format);
  const std::string ext = cfg.format == "jsonl" ? ".jsonl" : ".tsv";
  const bool write = !out_dir.empty();
  if (write) std::filesystem::create_directories(out_dir);
  auto save = [&](const Corpus& c, const std::string& name) {
    if (write) save_corpus(c, out_dir / (name + ext), fmt);
  };

  ExperimentResult res;
  Report& details = res.details;

  // Synthetic pools and test set.
  auto gen = [&](std::size_t n, std::uint64_t stream, const NoiseSpec& noise) {
    SyntheticSpec spec;
    spec.n_pairs = n;
    spec.vocab_size = cfg.synthetic.vocab_size;
    spec.min_len = cfg.synthetic.min_len;
    spec.max_len = cfg.synthetic.max_len;
    spec.zipf = cfg.synthetic.zipf;
    spec.noise = noise;
    spec.seed = derive_seed(cfg.seed, stream);
    return gen_synthetic(spec);
  };
  const SyntheticCorpus syn_a = gen(cfg.synthetic.pool_a, kPoolA, NoiseSpec{});
  NoiseSpec b_noise = cfg.noise;
  b_noise.seed = derive_seed(cfg.noise.seed, kPoolB);
  const SyntheticCorpus syn_b = gen(cfg.synthetic.pool_b, kPoolB, b_noise);
  const SyntheticCorpus syn_test = gen(cfg.synthetic.test, kTest, NoiseSpec{});
  const Corpus& test = syn_test.clean;

  EmbedderConfig ecfg;
  ecfg.dim = cfg.embed_dim;
  if (cfg.lexicon_pivot) ecfg.lexicon = toy_lexicon(cfg.synthetic.vocab_size);
  const Embedder embedder(ecfg);

  const Pools pools = stage("score", log, [&] {
    const Corpus scored = score_pools(syn_a.clean, syn_b.noisy, cfg, embedder);
    save(scored, "scored");
    Pools p = split_pools(scored, cfg.low, cfg.high);
    if (p.a.size() != syn_a.clean.size() || p.b.size() != syn_b.noisy.size()) {
      fail(Errc::InvalidArgument, "pool split does not recover the generated pools");
    }
    return p;
  });
  const Corpus pool_a = pools.a.without_scores();
  const Corpus pool_b = pools.b.without_scores();
  save(pool_a, "pool_a");
  save(pool_b, "pool_b");
  save(test, "test");
  std::size_t corrupted = 0;
  for (bool c : syn_b.corrupted) corrupted += c;
  details.add("pool_a.pairs", pool_a.size());
  details.add("pool_b.pairs", pool_b.size());
  details.add("pool_b.corrupted", corrupted);
  details.add("test.pairs", test.size());

  const SubwordCodec codec = stage("bpe", log, [&] {
    const auto sents = all_sentences(concat(pool_a, pool_b));
    BpeModel bpe = learn_bpe(sents, cfg.merges);
    Vocab vocab = build_vocab(bpe, sents);
    return SubwordCodec(std::move(bpe), std::move(vocab));
  });
  details.add("bpe.merges", codec.bpe().num_merges());
  details.add("vocab.size", codec.vocab().size());

  const auto cands = stage("mine", log, [&] {
    const Corpus ab = concat(pool_a, pool_b);
    std::vector<Sentence> f, e;
    for (const auto& p : ab.pairs) {
      f.push_back(p.src);
      e.push_back(p.tgt);
    }
    const auto idx_f = build_index(f, embedder);
    const auto idx_e = build_index(e, embedder);
    return mine_candidates(pool_a, idx_f, idx_e, embedder, cfg.k, cfg.threads);
  });
  std::size_t orig = 0, total = 0;
  for (const auto& pc : cands) {
    for (const auto* side : {&pc.src, &pc.tgt}) {
      for (const auto& c : *side) {
        orig += c.is_original;
        ++total;
      }
    }
  }
  details.add("mine.candidates", total);
  details.add("mine.original_pct", pct(orig, total));

  const std::size_t editor_epochs = cfg.model.max_epochs;
  const std::size_t nmt_epochs = cfg.nmt_epochs == 0 ? cfg.model.max_epochs : cfg.nmt_epochs;
  DecodeOptions dopts;
  dopts.beam = cfg.beam;
  dopts.batch_size = cfg.decode_batch;

  const SystemOutcome editor = stage("train-editor", log, [&] {
    return train_system(pool_a, cands, codec, cfg, false, editor_epochs,
                        derive_seed(cfg.seed, kEditor), log, details, "editor");
  });
  if (write) save_checkpoint(out_dir / "editor.btxe", editor.model, editor.epochs, editor.dev_ppl);

  const Corpus r_b = stage("refine-b", log, [&] {
    RefineStats st;
    Corpus out = refine_corpus(editor.model, pool_b, dopts, &st);
    details.add("refine_b.replaced_src", st.replaced_src);
    details.add("refine_b.replaced_tgt", st.replaced_tgt);
    details.add("refine_b.failures", st.failures);
    return out;
  });
  save(r_b, "r_b");
  const Corpus r_a = stage("refine-a", log, [&] { return refine_corpus(editor.model, pool_a, dopts); });
  save(r_a, "r_a");

  {
    std::size_t restored = 0, consistent = 0, unchanged = 0;
    for (std::size_t i = 0; i < pool_b.size(); ++i) {
      if (!syn_b.corrupted[i]) continue;
      restored += r_b.pairs[i].src == syn_b.clean.pairs[i].src &&
                  r_b.pairs[i].tgt == syn_b.clean.pairs[i].tgt;
      consistent += satisfies_rule(r_b.pairs[i]);
    }
    for (std::size_t i = 0; i < pool_a.size(); ++i) unchanged += r_a.pairs[i] == pool_a.pairs[i];
    res.pool_a_size = pool_a.size();
    res.refined_a_size = r_a.size();
    res.pool_a_unchanged_pct = pct(unchanged, pool_a.size());
    res.b_restored_pct = pct(restored, corrupted);
    details.add("refine_b.restored_pct", res.b_restored_pct);
    details.add("refine_b.consistent_pct", pct(consistent, corrupted));
    details.add("refine_a.unchanged_pct", res.pool_a_unchanged_pct);
    details.merge("edits.b", to_report(edited_fraction(pool_b, r_b)));
    details.merge("edits.a", to_report(edited_fraction(pool_a, r_a)));
    details.merge("ttr.b_tgt", to_report(type_token_ratio(pool_b.tgt_texts())));
    details.merge("ttr.r_b_tgt", to_report(type_token_ratio(r_b.tgt_texts())));
  }

  // Translation systems, f -> e and e -> f from masked examples.
  auto nmt = [&](const Corpus& train_set, Stream stream, const std::string& tag) {
    return stage("train-" + tag, log, [&] {
      return train_system(train_set, {}, codec, cfg, true, nmt_epochs, derive_seed(cfg.seed, stream),
                          log, details, tag);
    });
  };
  const SystemOutcome nmt_a = nmt(pool_a, kNmtA, "nmt_a");
  const Corpus b_b = stage("backtranslate-b", log, [&] {
    return backtranslate_corpus(nmt_a.model, pool_b, dopts);
  });
  save(b_b, "b_b");
  {
    std::size_t consistent = 0;
    for (std::size_t i = 0; i < pool_b.size(); ++i) {
      if (syn_b.corrupted[i]) consistent += satisfies_rule(b_b.pairs[i]);
    }
    details.add("backtranslate_b.consistent_pct", pct(consistent, corrupted));
  }

  const Corpus ab = concat(pool_a, pool_b);
  const Corpus ab_b = concat(pool_a, b_b);
  const Corpus ab_r = concat(pool_a, r_b);
  const SystemOutcome nmt_ab = nmt(ab, kNmtAB, "nmt_ab");
  const SystemOutcome nmt_abb = nmt(ab_b, kNmtABb, "nmt_a_bb");
  const SystemOutcome nmt_abr = nmt(ab_r, kNmtABr, "nmt_a_rb");

  const auto refs = test.tgt_texts();
  std::vector<std::vector<std::string>> ref_tokens;
  for (const auto& r : refs) ref_tokens.push_back(apply_bpe(codec.bpe(), r));
  auto evaluate = [&](const std::string& name, const SystemOutcome& sys, std::size_t n) {
    return stage("evaluate " + name, log, [&] {
      const auto hyps = translate(sys.model, test.src_texts(), dopts);
      std::vector<std::vector<std::string>> hyp_tokens;
      for (const auto& h : hyps) hyp_tokens.push_back(apply_bpe(codec.bpe(), h));
      ExperimentRow row{name, n, bleu(hyp_tokens, ref_tokens).score, chrf(hyps, refs).score};
      return row;
    });
  };
  res.rows.push_back(evaluate("Pool A", nmt_a, pool_a.size()));
  res.rows.push_back(res.rows.back());
  res.rows.back().system = "Filtering";
  res.rows.push_back(evaluate("A∪B", nmt_ab, ab.size()));
  res.rows.push_back(evaluate("A∪b(B)", nmt_abb, ab_b.size()));
  res.rows.push_back(evaluate("A∪r(B)", nmt_abr, ab_r.size()));

  for (const auto& r : res.rows) {
    details.add("row." + r.system + ".bleu", r.bleu);
    details.add("row." + r.system + ".chrf", r.chrf);
  }
  if (write) {
    std::ofstream(out_dir / "report.txt") << format_experiment_table(res) << "\n"
                                         << details.to_key_values();
    std::ofstream(out_dir / "report.tsv") << details.to_tsv();
  }
  return res;
}

std::string format_experiment_table(const ExperimentResult& r) {
  std::string out = "system     pairs     BLEU     chrF\n";
  for (const auto& row : r.rows) {
    char buf[160];
    // column widths count bytes; "∪" takes three
    const int pad = 10 + static_cast<int>(row.system.size() - text::decode_utf8(row.system).size());
    std::snprintf(buf, sizeof buf, "%-*s %6zu  %7.2f  %7.2f\n", pad, row.system.c_str(), row.train_pairs,
                  row.bleu, row.chrf);
    out += buf;
  }
  return out;
}

}  // namespace bitref
