// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   bitref_acceptance [--only 1,5,8] [--work-dir DIR] [--keep]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bitref/corpus.hpp"
#include "bitref/dataset.hpp"
#include "bitref/errors.hpp"
#include "bitref/metrics.hpp"
#include "bitref/mine.hpp"
#include "bitref/model/checkpoint.hpp"
#include "bitref/model/decoder.hpp"
#include "bitref/model/editor.hpp"
#include "bitref/model/trainer.hpp"
#include "bitref/pipeline/config.hpp"
#include "bitref/pipeline/experiment.hpp"
#include "bitref/pipeline/manifest.hpp"
#include "bitref/random.hpp"
#include "cli.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace bitref;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

fs::path g_work;

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// 1 ------------------------------------------------------------------------

Outcome gradient_oracle() {
  const auto codec = testing::tiny_codec(12);
  ModelConfig cfg = testing::tiny_config();
  cfg.dropout = 0.0;
  EditorModel64 model(cfg, codec);
  model.init_params(101);
  Rng rng(102);
  std::vector<TrainingExample> batch;
  for (std::size_t i = 0; i < 4; ++i) {
    auto ex = testing::random_example(rng, codec.vocab().size(), i);
    ex.weight = static_cast<std::uint32_t>(1 + i % 2);
    batch.push_back(ex);
  }
  const auto check = oracle::finite_difference_check(model, batch, 0.1, 1e-3);
  std::size_t total = 0;
  for (const auto& t : model.net().layout().tensors()) total += t.size();
  const bool pass = check.checked == total && check.max_rel_error < 1e-3;
  std::string detail = std::to_string(check.checked) + " params, max rel err " + fmt(check.max_rel_error) +
                       " at " + check.worst;
  if (!pass) {
    // Re-examine the offending entries with a step small enough to stay on
    // one side of any ReLU kink.
    const auto analytic = model.loss_and_grads(batch, 0.1).grads;
    auto& p = model.net().params();
    auto central = [&](std::size_t i, double h) {
      const double orig = p[i];
      p[i] = orig + h;
      const double up = model.loss(batch, 0.1).loss;
      p[i] = orig - h;
      const double down = model.loss(batch, 0.1).loss;
      p[i] = orig;
      return (up - down) / (2.0 * h);
    };
    auto rel = [](double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); };
    std::size_t over = 0;
    double worst_small = 0.0;
    std::set<std::string> groups;
    for (const auto& t : model.net().layout().tensors()) {
      for (std::size_t i = t.offset; i < t.offset + t.size(); ++i) {
        if (rel(analytic[i], central(i, 1e-3)) < 1e-3) continue;
        ++over;
        groups.insert(t.name);
        worst_small = std::max(worst_small, rel(analytic[i], central(i, 1e-6)));
      }
    }
    detail += "; " + std::to_string(over) + " entries over 1e-3 in " + std::to_string(groups.size()) +
              " tensors, same entries at step 1e-6: max rel err " + fmt(worst_small);
  }
  return {pass, detail};
}

// 2 ------------------------------------------------------------------------

Outcome knn_exactness() {
  Rng rng(201);
  const std::size_t dim = 32;
  auto random_vec = [&] {
    std::vector<float> v(dim);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return EmbeddingVector::normalized(std::move(v));
  };
  EmbeddingIndex index(dim);
  std::vector<std::vector<float>> rows;
  for (std::size_t i = 0; i < 1000; ++i) {
    auto v = random_vec();
    rows.emplace_back(v.values().begin(), v.values().end());
    index.add(std::move(v), Sentence{"s" + std::to_string(i), "e"});
  }
  std::size_t mismatches = 0;
  for (int q = 0; q < 200; ++q) {
    const auto query = random_vec();
    const auto expect = oracle::brute_knn(rows, {query.values().begin(), query.values().end()}, 4);
    const auto got = knn(query, index, 4);
    std::vector<std::size_t> ids;
    for (const auto& c : got) ids.push_back(c.index);
    mismatches += ids != expect;
  }
  return {mismatches == 0, "200 queries, " + std::to_string(mismatches) + " mismatches"};
}

// 3 ------------------------------------------------------------------------

Outcome ter_oracle() {
  const auto strings = oracle::all_strings("ab", 4);
  std::size_t pairs = 0, bad = 0;
  auto spaced = [](const std::string& s) {
    Tokens t;
    for (char c : s) t.emplace_back(1, c);
    return t;
  };
  for (const auto& h : strings) {
    for (const auto& r : strings) {
      const auto a = ter_labels(spaced(h), spaced(r));
      const auto& s = a.stats;
      const bool ok = s.edits() == oracle::bfs_edit_distance(h, r, "ab") &&
                      s.correct + s.sub + s.del == r.size() && s.correct + s.sub + s.ins == h.size();
      bad += !ok;
      ++pairs;
    }
  }
  return {bad == 0, std::to_string(pairs) + " pairs, " + std::to_string(bad) + " violations"};
}

// 4 ------------------------------------------------------------------------

Outcome metric_identities() {
  auto toks = [](const std::string& s) { return tokenize_ws({s})[0]; };
  const std::vector<std::string> text{"the cat sat on the mat", "a quick brown fox", "x"};
  const auto t = tokenize_ws(text);
  const double b = bleu(t, t).score;
  const double c = chrf(text, text).score;
  // hand-derived: clipped p = (1/3, 1/3, 1/2, 1); BP exp(1 - 3/2) with p1 = p2 = 1
  const double clip = bleu({toks("the the the")}, {toks("the cat")}).score;
  const double clip_expect = 100.0 * std::pow((1.0 / 3.0) * (1.0 / 3.0) * 0.5 * 1.0, 0.25);
  const double bp = bleu({toks("the cat")}, {toks("the cat sat")}).score;
  const double bp_expect = 100.0 * std::exp(1.0 - 3.0 / 2.0);
  const bool ok = std::abs(b - 100.0) < 1e-9 && std::abs(c - 100.0) < 1e-9 &&
                  std::abs(clip - clip_expect) < 1e-9 && std::abs(bp - bp_expect) < 1e-9;
  return {ok, "BLEU id " + fmt(b, 12) + ", chrF id " + fmt(c, 12) + ", clip " + fmt(clip, 12) +
                  ", BP " + fmt(bp, 12)};
}

// 5 ------------------------------------------------------------------------

Outcome loss_wiring() {
  const auto codec = testing::tiny_codec(300);
  ModelConfig cfg;
  cfg.dropout = 0.0;
  EditorModel model(cfg, codec);
  model.init_params(501);
  Rng rng(502);
  std::vector<TrainingExample> batch;
  for (std::size_t i = 0; i < 64; ++i) batch.push_back(testing::random_example(rng, codec.vocab().size(), i));
  const double ln_v = std::log(static_cast<double>(codec.vocab().size()));
  const double init = model.loss(batch, 0.0).loss;
  const bool init_ok = std::abs(init - ln_v) / ln_v < 0.05;

  auto a = batch[0];
  std::vector<TrainingExample> repeated{a, batch[1], a, a, a};
  a.weight = 4;
  std::vector<TrainingExample> weighted{a, batch[1]};
  const auto r1 = model.loss_and_grads(repeated, 0.2);
  const auto r2 = model.loss_and_grads(weighted, 0.2);
  const bool weight_ok = r1.stats.loss == r2.stats.loss && r1.grads == r2.grads;

  const double nll = model.loss(batch, 0.0).nll;
  const double ppl = perplexity(model, batch);
  const bool ppl_ok = std::abs(ppl - std::exp(nll)) <= 1e-9 * std::exp(nll);
  return {init_ok && weight_ok && ppl_ok,
          "init loss " + fmt(init) + " vs ln V " + fmt(ln_v) + ", weight==repeat " +
              (weight_ok ? "yes" : "no") + ", |ppl-exp(nll)| " + fmt(std::abs(ppl - std::exp(nll)))};
}

// 6 ------------------------------------------------------------------------

Outcome overfit_smoke() {
  const auto codec = testing::tiny_codec(30);
  Rng rng(601);
  std::vector<TrainingExample> data;
  for (std::size_t i = 0; i < 20; ++i) data.push_back(testing::random_example(rng, codec.vocab().size(), i));
  ModelConfig cfg = testing::tiny_config();
  cfg.dim = 32;
  cfg.ffn_dim = 64;
  cfg.heads = 4;
  cfg.lr = 1e-2;
  cfg.warmup_updates = 10;
  cfg.max_tokens_per_batch = 40;
  cfg.max_epochs = 200;
  EditorModel model(cfg, codec);
  model.init_params(602);
  const auto result = train(model, DatasetSplit{data, {}});
  double best_loss = 1e9;
  std::size_t best_epoch = 0;
  for (const auto& e : result.log) {
    if (e.train_loss < best_loss) {
      best_loss = e.train_loss;
      best_epoch = e.epoch;
    }
  }
  std::size_t exact = 0, lang_first = 0;
  for (const auto& ex : data) {
    const auto h = decode(result.best.model, DecodeInput{ex.in_f, ex.in_e}, {});
    lang_first += special::is_lang(h.lang);
    TokenSeq got{h.lang};
    got.insert(got.end(), h.tokens.begin(), h.tokens.end());
    exact += got == ex.target;
  }
  return {best_loss < 0.1 && exact == data.size() && lang_first == data.size(),
          "loss " + fmt(best_loss) + " at epoch " + std::to_string(best_epoch) + ", exact " +
              std::to_string(exact) + "/20, lang-first " + std::to_string(lang_first) + "/20"};
}

// 7 ------------------------------------------------------------------------

Outcome upweighting() {
  SyntheticSpec spec;
  spec.n_pairs = 1000;
  spec.vocab_size = 200;
  spec.min_len = 4;
  spec.max_len = 10;
  spec.seed = 701;
  const Corpus c = gen_synthetic(spec).clean;
  std::vector<std::string> text = c.src_texts();
  for (auto& t : c.tgt_texts()) text.push_back(t);
  const BpeModel bpe = learn_bpe(text, 100);
  const SubwordCodec codec(bpe, build_vocab(bpe, text));
  std::vector<Sentence> src, tgt;
  for (const auto& p : c.pairs) {
    src.push_back(p.src);
    tgt.push_back(p.tgt);
  }
  const Embedder emb;
  const auto cands = mine_candidates(c, build_index(src, emb), build_index(tgt, emb), emb, 4);
  DatasetOptions opts;
  const auto d = build_dataset(c, cands, codec, opts);
  const auto edit = weighted_count(d.split.train, Task::Edit);
  const auto mt = weighted_count(d.split.train, Task::Mt);
  const double rel = std::abs(double(mt) - double(edit)) / double(edit);
  return {rel <= 0.001 && d.edit_examples == edit,
          "edit examples " + std::to_string(edit) + ", weighted MT mass " + std::to_string(mt) +
              ", rel diff " + fmt(rel)};
}

// 8, 9 --------------------------------------------------------------------

std::optional<ExperimentResult> g_experiment;
std::string g_experiment_error;

const ExperimentResult* experiment() {
  if (!g_experiment && g_experiment_error.empty()) {
    try {
      PipelineConfig cfg = experiment_defaults();
      g_experiment = run_experiment(cfg, g_work / "experiment", [](std::string_view line) {
        std::cerr << "    " << line << "\n";
      });
      std::cerr << format_experiment_table(*g_experiment);
    } catch (const std::exception& e) {
      g_experiment_error = e.what();
    }
  }
  return g_experiment ? &*g_experiment : nullptr;
}

Outcome directional() {
  const auto* r = experiment();
  if (!r) return {false, "experiment failed: " + g_experiment_error};
  const double refined = r->row("A∪r(B)").bleu;
  const double noisy = r->row("A∪B").bleu;
  const double filtered = r->row("Filtering").bleu;
  const bool ok = refined >= noisy + 2.0 && refined >= filtered + 2.0;
  return {ok, "A∪r(B) " + fmt(refined) + ", A∪B " + fmt(noisy) + ", Filtering " + fmt(filtered) +
                  ", A∪b(B) " + fmt(r->row("A∪b(B)").bleu) + "; corrupted B pairs restored exactly " +
                  fmt(r->b_restored_pct) + "%"};
}

Outcome overediting() {
  const auto* r = experiment();
  if (!r) return {false, "experiment failed: " + g_experiment_error};
  const bool ok = r->pool_a_unchanged_pct >= 80.0 && r->refined_a_size == r->pool_a_size;
  return {ok, "r(A) unchanged " + fmt(r->pool_a_unchanged_pct) + "%, size " +
                  std::to_string(r->refined_a_size) + "/" + std::to_string(r->pool_a_size)};
}

// 10 -----------------------------------------------------------------------

Outcome reproducibility() {
  const fs::path dir = g_work / "rerun";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto p = [&](const std::string& name) { return (dir / name).string(); };
  std::ostringstream sink;
  std::vector<std::string> failures;
  auto run = [&](std::vector<std::string> args) {
    const int code = cli::run(args, sink, sink);
    if (code != 0) failures.push_back(args[0] + " exited " + std::to_string(code));
  };
  const std::vector<std::string> small{"--set", "synthetic.vocab_size=40", "--set", "model.dim=16",
                                       "--set", "model.ffn_dim=32", "--set", "model.heads=2",
                                       "--set", "model.max_epochs=2", "--set", "model.dropout=0.1"};
  auto with = [&](std::vector<std::string> args) {
    args.insert(args.end(), small.begin(), small.end());
    return args;
  };
  run(with({"generate", "-o", p("scored.tsv"), "--clean", p("clean.tsv"), "--pairs", "240", "--score",
            "--p-replace", "0.2", "--pair-rate", "0.5"}));
  run(with({"split-pools", p("scored.tsv"), "--low", "1.0", "--high", "1.05"}));
  run(with({"mine", p("a.tsv"), "-o", p("cands.jsonl"), "--pool", p("b.tsv"), "--k", "2", "--dim", "64"}));
  run(with({"build", p("a.tsv"), "--candidates", p("cands.jsonl"), "--out-dir", p("data"), "--bpe-corpus",
            p("b.tsv"), "--merges", "30", "--dev-pairs", "5"}));
  run(with({"build", p("a.tsv"), "--out-dir", p("mt"), "--bpe", p("data/bpe.codes"), "--vocab",
            p("data/vocab.txt"), "--mt-only", "--dataset-format", "binary"}));
  run(with({"train", p("data/dataset.jsonl"), "--bpe", p("data/bpe.codes"), "--vocab", p("data/vocab.txt"),
            "-o", p("editor.btxe")}));
  run(with({"train", p("mt/dataset.bin"), "--bpe", p("data/bpe.codes"), "--vocab", p("data/vocab.txt"), "-o",
            p("nmt.btxe")}));
  run(with({"refine", p("b.tsv"), "--model", p("editor.btxe"), "-o", p("r_b.tsv"), "--beam", "2"}));
  run(with({"backtranslate", p("b.tsv"), "--model", p("nmt.btxe"), "-o", p("b_b.tsv")}));
  run(with({"evaluate", p("clean.tsv"), "--model", p("nmt.btxe"), "-o", p("eval.txt")}));
  run(with({"analyze", p("b.tsv"), p("r_b.tsv"), "-o", p("analysis.txt")}));
  if (!failures.empty()) return {false, failures.front()};

  std::vector<fs::path> manifests;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.path().string().ends_with(".manifest.json")) manifests.push_back(e.path());
  }
  std::sort(manifests.begin(), manifests.end());
  std::size_t identical = 0;
  for (const auto& m : manifests) {
    const std::string before = slurp(m);
    const RunManifest rm = load_manifest(m);
    std::vector<std::string> saved;
    for (const auto& o : rm.outputs) saved.push_back(slurp(o.path));
    std::ostringstream err;
    const int code = cli::run({"rerun", m.string()}, sink, err);
    bool same = code == 0 && slurp(m) == before;
    for (std::size_t i = 0; i < rm.outputs.size(); ++i) same = same && slurp(rm.outputs[i].path) == saved[i];
    if (same) {
      ++identical;
    } else {
      failures.push_back(m.filename().string() + ": " + err.str());
    }
  }

  // checkpoints: load then save reproduces the file; parameters compare equal
  const Checkpoint ck = load_checkpoint(p("editor.btxe"));
  save_checkpoint(p("editor_copy.btxe"), ck);
  const bool ckpt_ok = slurp(p("editor.btxe")) == slurp(p("editor_copy.btxe")) &&
                       load_checkpoint(p("editor_copy.btxe")).model.net().params() == ck.model.net().params();
  if (!ckpt_ok) failures.push_back("checkpoint round trip differs");
  return {failures.empty() && manifests.size() >= 11,
          std::to_string(identical) + "/" + std::to_string(manifests.size()) + " reruns identical, checkpoint " +
              (ckpt_ok ? "bit-exact" : "differs") + (failures.empty() ? "" : "; " + failures.front())};
}

std::set<int> parse_only(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) out.insert(std::stoi(part));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  bool keep = false;
  g_work = fs::temp_directory_path() / "bitref_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      only = parse_only(argv[++i]);
    } else if (a == "--work-dir" && i + 1 < argc) {
      g_work = argv[++i];
    } else if (a == "--keep") {
      keep = true;
    } else {
      std::cerr << "usage: bitref_acceptance [--only 1,2,...] [--work-dir DIR] [--keep]\n";
      return 2;
    }
  }
  fs::create_directories(g_work);

  const std::vector<Criterion> criteria{
      {1, "gradient oracle", 60, gradient_oracle},
      {2, "kNN exactness", 5, knn_exactness},
      {3, "TER-label oracle", 10, ter_oracle},
      {4, "metric identities", 1, metric_identities},
      {5, "loss wiring", 60, loss_wiring},
      {6, "overfit smoke test", 300, overfit_smoke},
      {7, "upweighting contract", 60, upweighting},
      {8, "directional reproduction", 1800, directional},
      {9, "overediting bound", 1800, overediting},
      {10, "reproducibility", 600, reproducibility},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    // 8 and 9 share one experiment run; its time is charged to 8
    const bool in_budget = secs <= c.budget_s;
    const bool pass = o.pass && in_budget;
    failed += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail << " ("
              << fmt(secs, 3) << "s" << (in_budget ? "" : ", over the " + fmt(c.budget_s, 5) + "s budget")
              << ")" << std::endl;
  }
  if (!keep) {
    std::error_code ec;
    fs::remove_all(g_work, ec);
  }
  return failed == 0 ? 0 : 1;
}
