#include <doctest.h>

#include <cmath>
#include <fstream>

#include "bitref/errors.hpp"
#include "bitref/model/checkpoint.hpp"
#include "bitref/model/decoder.hpp"
#include "bitref/model/editor.hpp"
#include "bitref/model/trainer.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace bitref;

TEST_SUITE("model") {

TEST_CASE("encode_input resets positions after SEP") {
  const auto in = encode_input(TokenSeq{10, 11, 12}, TokenSeq{13, 14}, 128);
  CHECK(in.ids == TokenSeq{10, 11, 12, special::kSep, 13, 14});
  CHECK(in.positions == std::vector<std::int32_t>{0, 1, 2, 0, 1, 2});
  CHECK(in.lang_tags == std::vector<TokenId>{5, 5, 5, 6, 6, 6});
}

TEST_CASE("masked segment is a single MASK with its segment tag") {
  const auto in = encode_input(TokenSeq{special::kMask}, TokenSeq{20, 21}, 128);
  CHECK(in.ids.front() == special::kMask);
  CHECK(in.lang_tags.front() == special::kLangF);
  const auto in2 = encode_input(TokenSeq{20}, TokenSeq{special::kMask}, 128);
  CHECK(in2.ids.back() == special::kMask);
  CHECK(in2.lang_tags.back() == special::kLangE);
}

TEST_CASE("positions depend only on segment lengths") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = testing::random_body(rng, 40, 1, 9);
    const auto b = testing::random_body(rng, 40, 1, 9);
    const auto x = encode_input(a, b, 128);
    const auto y = encode_input(b, a, 128);
    std::vector<std::int32_t> expect;
    for (std::size_t i = 0; i < a.size(); ++i) expect.push_back(static_cast<std::int32_t>(i));
    for (std::size_t i = 0; i <= b.size(); ++i) expect.push_back(static_cast<std::int32_t>(i));
    CHECK(x.positions == expect);
    if (a.size() == b.size()) CHECK(x.positions == y.positions);
  }
}

TEST_CASE("encode_input rejects overlong inputs") {
  CHECK_THROWS_AS(encode_input(TokenSeq(10, 9), TokenSeq(10, 9), 20), Error);
  CHECK_NOTHROW(encode_input(TokenSeq(10, 9), TokenSeq(9, 9), 20));
}

TEST_CASE("initial loss is close to ln V") {
  const auto codec = testing::tiny_codec(200);
  ModelConfig cfg;  // desk defaults
  cfg.dropout = 0.0;
  EditorModel model(cfg, codec);
  model.init_params(1);
  Rng rng(2);
  std::vector<TrainingExample> batch;
  for (std::size_t i = 0; i < 32; ++i) batch.push_back(testing::random_example(rng, codec.vocab().size(), i));
  const double loss = model.loss(batch, 0.0).loss;
  const double ln_v = std::log(static_cast<double>(codec.vocab().size()));
  CHECK(std::abs(loss - ln_v) / ln_v < 0.05);
}

TEST_CASE("weight w equals w repetitions exactly") {
  const auto codec = testing::tiny_codec(30);
  EditorModel model(testing::tiny_config(), codec);
  model.init_params(4);
  Rng rng(5);
  auto a = testing::random_example(rng, codec.vocab().size(), 0);
  const auto b = testing::random_example(rng, codec.vocab().size(), 1);
  std::vector<TrainingExample> repeated{a, b, a, a};
  a.weight = 3;
  std::vector<TrainingExample> weighted{a, b};
  const auto r1 = model.loss_and_grads(repeated, 0.2);
  const auto r2 = model.loss_and_grads(weighted, 0.2);
  CHECK(r1.stats.loss == r2.stats.loss);
  CHECK(r1.stats.nll == r2.stats.nll);
  CHECK(r1.grads == r2.grads);
}

TEST_CASE("gradients match central differences in double precision") {
  // Step 1e-5 keeps the stencil clear of ReLU kinks at almost every point;
  // at 1e-3 kinks inside the stencil dominate (see the acceptance suite).
  const auto codec = testing::tiny_codec(12);
  for (std::uint64_t seed : {7, 17, 27}) {
    EditorModel64 model(testing::tiny_config(), codec);
    model.init_params(seed);
    Rng rng(seed + 1);
    std::vector<TrainingExample> batch;
    for (std::size_t i = 0; i < 3; ++i) {
      auto ex = testing::random_example(rng, codec.vocab().size(), i);
      ex.weight = static_cast<std::uint32_t>(1 + i);
      batch.push_back(ex);
    }
    const auto check = oracle::finite_difference_check(model, batch, 0.1, 1e-5);
    INFO("seed " << seed << " worst: " << check.worst);
    std::size_t n = 0;
    for (const auto& t : model.net().layout().tensors()) n += t.size();
    CHECK(check.checked == n);
    CHECK(check.max_rel_error < 1e-3);
  }
}

TEST_CASE("perplexity is exp of the unsmoothed NLL") {
  const auto codec = testing::tiny_codec(30);
  EditorModel model(testing::tiny_config(), codec);
  model.init_params(9);
  Rng rng(10);
  std::vector<TrainingExample> batch;
  for (std::size_t i = 0; i < 6; ++i) batch.push_back(testing::random_example(rng, codec.vocab().size(), i));
  const double nll = model.loss_and_grads(batch, 0.0).stats.nll;
  CHECK(std::abs(perplexity(model, batch) - std::exp(nll)) <= 1e-9 * std::exp(nll));
  auto doubled = batch;
  doubled.insert(doubled.end(), batch.begin(), batch.end());
  CHECK(perplexity(model, doubled) == doctest::Approx(perplexity(model, batch)).epsilon(1e-12));
}

TEST_CASE("uniform-ish init gives perplexity near V") {
  const auto codec = testing::tiny_codec(200);
  ModelConfig cfg;
  cfg.dropout = 0.0;
  EditorModel model(cfg, codec);
  model.init_params(11);
  Rng rng(12);
  std::vector<TrainingExample> batch;
  for (std::size_t i = 0; i < 32; ++i) batch.push_back(testing::random_example(rng, codec.vocab().size(), i));
  const double v = static_cast<double>(codec.vocab().size());
  CHECK(std::abs(perplexity(model, batch) - v) / v < 0.10);
}

TEST_CASE("incremental decoding agrees with teacher forcing") {
  const auto codec = testing::tiny_codec(30);
  EditorModel model(testing::tiny_config(), codec);
  model.init_params(13);
  Rng rng(14);
  for (int i = 0; i < 5; ++i) {
    const auto ex = testing::random_example(rng, codec.vocab().size(), 0);
    const double batch_nll = model.loss(std::vector<TrainingExample>{ex}, 0.0).nll;
    CHECK(oracle::stepwise_nll(model, ex) == doctest::Approx(batch_nll).epsilon(1e-4));
  }
}

TEST_CASE("step distributions are normalized") {
  const auto codec = testing::tiny_codec(30);
  EditorModel model(testing::tiny_config(), codec);
  model.init_params(15);
  nn::PackedBatch b;
  const auto enc = encode_input(TokenSeq{8, 9}, TokenSeq{10}, 32);
  b.add_source(enc.ids, enc.positions, {0, 0, 1, 1});
  const auto mem = model.net().encode(b);
  auto cache = model.net().new_cache();
  TokenId tok = special::kBos;
  for (int t = 0; t < 4; ++t) {
    const auto logp = model.net().step({&mem[0]}, {&cache}, {tok});
    const double total = logp.row(0).array().exp().template cast<double>().sum();
    CHECK(std::abs(total - 1.0) < 1e-5);
    tok = 9;
  }
}

TEST_CASE("learning rate warms up linearly then decays as inverse sqrt") {
  ModelConfig c;
  c.lr = 1e-3;
  c.warmup_init_lr = 1e-7;
  c.warmup_updates = 100;
  CHECK(learning_rate(c, 0) == doctest::Approx(1e-7));
  CHECK(learning_rate(c, 50) == doctest::Approx(1e-7 + (1e-3 - 1e-7) * 0.5));
  CHECK(learning_rate(c, 100) == doctest::Approx(1e-3));
  CHECK(learning_rate(c, 400) == doctest::Approx(5e-4));
}

TEST_CASE("batches respect the weighted token budget") {
  Rng rng(16);
  std::vector<TrainingExample> ex;
  for (std::size_t i = 0; i < 40; ++i) {
    ex.push_back(testing::random_example(rng, 30, i));
    ex.back().weight = 1 + static_cast<std::uint32_t>(i % 3);
  }
  const auto batches = make_batches(ex, 60);
  std::size_t seen = 0;
  for (const auto& b : batches) {
    std::size_t used = 0;
    for (const auto& e : b) used += example_tokens(e);
    CHECK((used <= 60 || b.size() == 1));
    seen += b.size();
  }
  CHECK(seen == ex.size());
}

namespace {

std::vector<TrainingExample> copy_task(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TrainingExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    TrainingExample ex;
    ex.pair_index = i;
    ex.in_f = testing::random_body(rng, vocab, 2, 4);
    ex.in_e = testing::random_body(rng, vocab, 2, 4);
    const bool to_e = i % 2 == 0;
    ex.target = {to_e ? special::kLangE : special::kLangF};
    const auto& body = to_e ? ex.in_e : ex.in_f;
    ex.target.insert(ex.target.end(), body.begin(), body.end());
    out.push_back(ex);
  }
  return out;
}

ModelConfig fast_config() {
  ModelConfig c = testing::tiny_config();
  c.dim = 32;
  c.ffn_dim = 64;
  c.heads = 4;
  c.lr = 1e-2;
  c.warmup_updates = 10;
  c.max_epochs = 60;
  c.max_tokens_per_batch = 40;
  return c;
}

}  // namespace

TEST_CASE("training is deterministic per seed") {
  const auto codec = testing::tiny_codec(20);
  DatasetSplit split{copy_task(10, codec.vocab().size(), 1), {}};
  ModelConfig c = fast_config();
  c.max_epochs = 3;
  c.dropout = 0.1;
  auto run = [&] {
    EditorModel m(c, codec);
    m.init_params(c.seed);
    return train(m, split);
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.log == b.log);
  CHECK(a.best.model.net().params() == b.best.model.net().params());
}

TEST_CASE("checkpoint round trip is bit exact and decodes identically") {
  testing::TempDir dir("ckpt");
  const auto codec = testing::tiny_codec(20);
  EditorModel model(fast_config(), codec);
  model.init_params(21);
  const std::string path = dir / "m.btxe";
  save_checkpoint(path, model, 3, 1.5);
  const Checkpoint ck = load_checkpoint(path);
  CHECK(ck.epoch == 3);
  CHECK(ck.dev_ppl == 1.5);
  CHECK(ck.model.config() == model.config());
  CHECK(ck.model.codec().vocab() == codec.vocab());
  CHECK(ck.model.net().params() == model.net().params());

  DecodeOptions opts;
  opts.beam = 2;
  const DecodeInput in{TokenSeq{8, 9, 10}, TokenSeq{11, 12}};
  const auto h1 = decode(model, in, opts);
  const auto h2 = decode(ck.model, in, opts);
  CHECK(h1.tokens == h2.tokens);
  CHECK(h1.lang == h2.lang);

  // save(load(x)) reproduces the file byte for byte
  save_checkpoint(dir / "m2.btxe", ck);
  std::ifstream f1(path, std::ios::binary), f2(dir / "m2.btxe", std::ios::binary);
  const std::string s1((std::istreambuf_iterator<char>(f1)), {});
  const std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);
}

TEST_CASE("damaged checkpoints are rejected with the right error") {
  testing::TempDir dir("ckpt_bad");
  EditorModel model(fast_config(), testing::tiny_codec(10));
  model.init_params(1);
  const std::string path = dir / "m.btxe";
  save_checkpoint(path, model, 1, 2.0);
  std::ifstream f(path, std::ios::binary);
  std::string body((std::istreambuf_iterator<char>(f)), {});
  auto expect = [&](const std::string& content, Errc code) {
    std::ofstream(dir / "bad.btxe", std::ios::binary | std::ios::trunc) << content;
    try {
      load_checkpoint(dir / "bad.btxe");
      FAIL("no error");
    } catch (const Error& e) {
      CHECK(e.code() == code);
    }
  };
  expect(body.substr(0, body.size() - 5), Errc::ManifestMismatch);
  expect(body.substr(0, 20), Errc::ManifestMismatch);
  std::string magic = body;
  magic[0] = 'X';
  expect(magic, Errc::BadMagic);
  std::string version = body;
  version[4] = 9;
  expect(version, Errc::VersionMismatch);
}

TEST_CASE("decoding starts with a language id and honours forcing") {
  const auto codec = testing::tiny_codec(20);
  EditorModel model(fast_config(), codec);
  model.init_params(31);
  Rng rng(32);
  std::vector<DecodeInput> inputs;
  for (int i = 0; i < 12; ++i) {
    inputs.push_back({testing::random_body(rng, codec.vocab().size(), 1, 4),
                      testing::random_body(rng, codec.vocab().size(), 1, 4)});
  }
  for (std::size_t beam : {1, 3}) {
    DecodeOptions opts;
    opts.beam = beam;
    opts.max_len = 8;
    for (const auto& h : decode(model, inputs, opts)) {
      CHECK(special::is_lang(h.lang));
      for (auto t : h.tokens) CHECK(t >= special::kCount);
      CHECK(h.tokens.size() <= 7);
    }
    opts.force_lang = special::kLangF;
    for (const auto& h : decode(model, inputs, opts)) CHECK(h.lang == special::kLangF);
  }
}

TEST_CASE("batched decoding equals one-at-a-time decoding") {
  const auto codec = testing::tiny_codec(20);
  EditorModel model(fast_config(), codec);
  model.init_params(33);
  Rng rng(34);
  std::vector<DecodeInput> inputs;
  for (int i = 0; i < 6; ++i) {
    inputs.push_back({testing::random_body(rng, codec.vocab().size(), 1, 4),
                      testing::random_body(rng, codec.vocab().size(), 1, 4)});
  }
  DecodeOptions opts;
  opts.beam = 2;
  opts.max_len = 8;
  const auto all = decode(model, inputs, opts);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto one = decode(model, inputs[i], opts);
    CHECK(one.tokens == all[i].tokens);
    CHECK(one.lang == all[i].lang);
  }
}

TEST_CASE("refinement and back-translation preserve size and the kept side") {
  const auto codec = testing::tiny_codec(20);
  EditorModel model(fast_config(), codec);
  model.init_params(35);
  Corpus c("f", "e");
  c.add("w1 w2", "w3 w4", 1.2);
  c.add("w5", "w6 w7 w8", 1.1);
  std::string long_text;
  for (int i = 0; i < 40; ++i) long_text += "w9 ";
  c.add(long_text, "w1");
  DecodeOptions opts;
  opts.max_len = 6;
  RefineStats st;
  const Corpus r = refine_corpus(model, c, opts, &st);
  CHECK(r.size() == c.size());
  CHECK(st.failures >= 1);
  CHECK(r.pairs[2].src == c.pairs[2].src);  // too long: passed through
  for (std::size_t i = 0; i < r.size(); ++i) {
    CHECK(!r.pairs[i].score);
    CHECK((r.pairs[i].src == c.pairs[i].src || r.pairs[i].tgt == c.pairs[i].tgt));
  }
  const Corpus b = backtranslate_corpus(model, c, opts);
  CHECK(b.size() == c.size());
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(b.pairs[i].tgt == c.pairs[i].tgt);
}

TEST_CASE("training a copy task converges and decodes the targets") {
  const auto codec = testing::tiny_codec(20);
  const auto data = copy_task(10, codec.vocab().size(), 41);
  ModelConfig c = fast_config();
  c.max_epochs = 150;
  EditorModel m(c, codec);
  m.init_params(42);
  TrainOptions opts;
  opts.stop_below_loss = 0.05;
  const auto result = train(m, DatasetSplit{data, {}}, opts);
  CHECK(result.log.back().train_loss < 0.1);
  DecodeOptions dopts;
  std::size_t exact = 0;
  for (const auto& ex : data) {
    const auto h = decode(result.best.model, DecodeInput{ex.in_f, ex.in_e}, dopts);
    TokenSeq got{h.lang};
    got.insert(got.end(), h.tokens.begin(), h.tokens.end());
    exact += got == ex.target;
  }
  CHECK(exact == data.size());
}

}  // TEST_SUITE
