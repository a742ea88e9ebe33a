#include <doctest.h>

#include <set>

#include "bitref/corpus.hpp"
#include "bitref/dataset.hpp"
#include "bitref/errors.hpp"
#include "bitref/mine.hpp"
#include "bitref/tokenize.hpp"
#include "helpers.hpp"

using namespace bitref;

namespace {

struct Fixture {
  Corpus corpus;
  SubwordCodec codec;
  std::vector<PairCandidates> cands;
};

Fixture mined(std::size_t pairs, std::size_t k, std::uint64_t seed = 1) {
  SyntheticSpec spec;
  spec.n_pairs = pairs;
  spec.vocab_size = 60;
  spec.seed = seed;
  Fixture f;
  f.corpus = gen_synthetic(spec).clean;
  std::vector<std::string> text = f.corpus.src_texts();
  for (auto& t : f.corpus.tgt_texts()) text.push_back(t);
  const BpeModel bpe = learn_bpe(text, 20);
  f.codec = SubwordCodec(bpe, build_vocab(bpe, text));
  std::vector<Sentence> src, tgt;
  for (const auto& p : f.corpus.pairs) {
    src.push_back(p.src);
    tgt.push_back(p.tgt);
  }
  EmbedderConfig ec;
  ec.dim = 64;
  const Embedder e(ec);
  f.cands = mine_candidates(f.corpus, build_index(src, e), build_index(tgt, e), e, k);
  return f;
}

MinedCandidate candidate(const std::string& text, const std::string& lang, bool original) {
  return MinedCandidate{Sentence{text, lang}, 1.0, original, 0};
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("reconstruction examples for k=4 candidates") {
  const Fixture f = mined(30, 4);
  const auto ex = build_edit_examples(3, f.corpus.pairs[3], f.cands[3], f.codec);
  REQUIRE(ex.size() == 8);
  const TokenSeq xf = f.codec.encode(f.corpus.pairs[3].src.text);
  const TokenSeq xe = f.codec.encode(f.corpus.pairs[3].tgt.text);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(ex[i].in_f == xf);
    CHECK(ex[i].target.front() == special::kLangE);
    CHECK(TokenSeq(ex[i].target.begin() + 1, ex[i].target.end()) == xe);
  }
  for (std::size_t i = 4; i < 8; ++i) {
    CHECK(ex[i].in_e == xe);
    CHECK(ex[i].target.front() == special::kLangF);
    CHECK(TokenSeq(ex[i].target.begin() + 1, ex[i].target.end()) == xf);
  }
  for (const auto& e : ex) {
    CHECK(e.task == Task::Edit);
    CHECK(e.pair_index == 3);
    CHECK_NOTHROW(validate_example(e));
  }
}

TEST_CASE("an original candidate gives copy supervision") {
  const std::vector<std::string> text{"f1 f2 f3", "e3 e2 e1"};
  const SubwordCodec codec(BpeModel{}, build_vocab(BpeModel{}, text));
  BitextPair pair{Sentence{"f1 f2 f3", "f"}, Sentence{"e3 e2 e1", "e"}, std::nullopt};
  PairCandidates cands;
  cands.src = {candidate("f1 f2 f3", "f", true)};
  cands.tgt = {candidate("e3 e2 e1", "e", true)};
  const auto ex = build_edit_examples(0, pair, cands, codec);
  REQUIRE(ex.size() == 2);
  CHECK(TokenSeq(ex[0].target.begin() + 1, ex[0].target.end()) == ex[0].in_e);
  CHECK(TokenSeq(ex[1].target.begin() + 1, ex[1].target.end()) == ex[1].in_f);
}

TEST_CASE("a one-token substitution shows up in the target") {
  // single-character words stay whole without merges
  const std::vector<std::string> text{"a b c d", "x"};
  const SubwordCodec codec(BpeModel{}, build_vocab(BpeModel{}, text));
  BitextPair pair{Sentence{"a", "f"}, Sentence{"a b c d", "e"}, std::nullopt};
  PairCandidates cands;
  cands.tgt = {candidate("a x c d", "e", false)};
  const auto ex = build_edit_examples(0, pair, cands, codec);
  REQUIRE(ex.size() == 1);
  const TokenSeq body(ex[0].target.begin() + 1, ex[0].target.end());
  REQUIRE(body.size() == ex[0].in_e.size());
  std::size_t diffs = 0;
  for (std::size_t i = 0; i < body.size(); ++i) diffs += body[i] != ex[0].in_e[i];
  CHECK(diffs == 1);
  CHECK(body[1] == *codec.vocab().id_of("b"));
  CHECK(ex[0].in_e[1] == *codec.vocab().id_of("x"));
}

TEST_CASE("translation examples mask one side") {
  const Fixture f = mined(5, 1);
  const auto mt = build_mt_examples(2, f.corpus.pairs[2], f.codec);
  REQUIRE(mt.size() == 2);
  CHECK(mt[0].in_e == TokenSeq{special::kMask});
  CHECK(mt[0].target.front() == special::kLangE);
  CHECK(mt[1].in_f == TokenSeq{special::kMask});
  CHECK(mt[1].target.front() == special::kLangF);
  for (const auto& e : mt) {
    CHECK(e.task == Task::Mt);
    CHECK_NOTHROW(validate_example(e));
  }
}

TEST_CASE("validate_example rejects broken examples") {
  TrainingExample ex{{7}, {special::kMask}, {special::kLangE, 8}, Task::Mt, 1, 0};
  CHECK_NOTHROW(validate_example(ex));
  auto wrong_lang = ex;
  wrong_lang.target.front() = special::kLangF;
  CHECK_THROWS_AS(validate_example(wrong_lang), Error);
  auto zero = ex;
  zero.weight = 0;
  CHECK_THROWS_AS(validate_example(zero), Error);
  auto edit_mask = ex;
  edit_mask.task = Task::Edit;
  CHECK_THROWS_AS(validate_example(edit_mask), Error);
}

TEST_CASE("upweighting arithmetic") {
  std::vector<TrainingExample> mt(2);
  upweight_mt(8, mt);
  CHECK(mt[0].weight == 4);
  CHECK(mt[1].weight == 4);
  upweight_mt(2, mt);
  CHECK(mt[0].weight == 1);
  upweight_mt(0, mt);
  CHECK(mt[0].weight == 1);
}

TEST_CASE("weighted translation mass matches the reconstruction count") {
  const Fixture f = mined(1000, 4);
  DatasetOptions opts;
  const BuiltDataset d = build_dataset(f.corpus, f.cands, f.codec, opts);
  const auto edit = weighted_count(d.split.train, Task::Edit);
  const auto mt = weighted_count(d.split.train, Task::Mt);
  CHECK(edit == d.edit_examples);
  CHECK(edit == 8000);
  CHECK(std::abs(double(mt) - double(edit)) <= 0.001 * double(edit));
}

TEST_CASE("dev split is disjoint by pair and sized by construction") {
  const Fixture f = mined(100, 4, 3);
  DatasetOptions opts;
  opts.dev_pairs = 10;
  const BuiltDataset d = build_dataset(f.corpus, f.cands, f.codec, opts);
  // 8 reconstruction examples plus 2 translation examples per pair
  CHECK(d.split.dev.size() == 10 * (8 + 2));
  CHECK(d.split.train.size() == 90 * (8 + 2));
  std::set<std::size_t> dev_pairs, train_pairs;
  for (const auto& e : d.split.dev) dev_pairs.insert(e.pair_index);
  for (const auto& e : d.split.train) train_pairs.insert(e.pair_index);
  CHECK(dev_pairs.size() == 10);
  for (auto p : dev_pairs) CHECK(train_pairs.count(p) == 0);
  // translation weight 4 mirrors k=4
  for (const auto& e : d.split.dev) CHECK(e.weight == (e.task == Task::Mt ? 4u : 1u));

  opts.dev_clean_only = true;
  const BuiltDataset clean = build_dataset(f.corpus, f.cands, f.codec, opts);
  CHECK(clean.split.dev.size() == 20);
  for (const auto& e : clean.split.dev) CHECK(e.task == Task::Mt);
}

TEST_CASE("splits are deterministic") {
  const Fixture f = mined(40, 2);
  DatasetOptions opts;
  opts.dev_pairs = 0;
  CHECK(build_dataset(f.corpus, f.cands, f.codec, opts).split.dev.empty());
  opts.dev_pairs = 5;
  const auto a = build_dataset(f.corpus, f.cands, f.codec, opts);
  const auto b = build_dataset(f.corpus, f.cands, f.codec, opts);
  CHECK(a.split == b.split);
  opts.dev_pairs = 40;
  CHECK_THROWS_AS(build_dataset(f.corpus, f.cands, f.codec, opts), Error);
}

TEST_CASE("translation-only datasets skip reconstruction") {
  const Fixture f = mined(20, 2);
  DatasetOptions opts;
  opts.mt_only = true;
  const auto d = build_dataset(f.corpus, {}, f.codec, opts);
  CHECK(d.edit_examples == 0);
  CHECK(d.split.train.size() == 40);
  for (const auto& e : d.split.train) {
    CHECK(e.task == Task::Mt);
    CHECK(e.weight == 1);
  }
}

TEST_CASE("the length filter drops long examples") {
  const Fixture f = mined(20, 2);
  DatasetOptions opts;
  opts.max_len = 3;
  const auto d = build_dataset(f.corpus, f.cands, f.codec, opts);
  CHECK(d.dropped_too_long > 0);
  CHECK(d.split.train.size() + d.dropped_too_long == 20 * (4 + 2));
}

TEST_CASE("datasets round-trip in both formats") {
  testing::TempDir dir("dataset_io");
  const Fixture f = mined(30, 2);
  DatasetOptions opts;
  opts.dev_pairs = 3;
  const auto d = build_dataset(f.corpus, f.cands, f.codec, opts);
  save_dataset(dir / "d.jsonl", d.split, DatasetFormat::Jsonl);
  save_dataset(dir / "d.bin", d.split, DatasetFormat::Binary);
  CHECK(load_dataset(dir / "d.jsonl") == d.split);
  CHECK(load_dataset(dir / "d.bin") == d.split);
}

}  // TEST_SUITE
