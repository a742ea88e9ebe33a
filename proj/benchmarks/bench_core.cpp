#include <benchmark/benchmark.h>

#include "bitref/corpus.hpp"
#include "bitref/mine.hpp"
#include "bitref/model/decoder.hpp"
#include "bitref/model/editor.hpp"
#include "bitref/random.hpp"
#include "bitref/tokenize.hpp"

using namespace bitref;

namespace {

std::vector<std::string> synthetic_text(std::size_t pairs) {
  SyntheticSpec spec;
  spec.n_pairs = pairs;
  spec.vocab_size = 400;
  spec.zipf = 1.0;
  const auto c = gen_synthetic(spec).clean;
  auto text = c.src_texts();
  for (auto& t : c.tgt_texts()) text.push_back(t);
  return text;
}

EmbeddingIndex random_index(std::size_t n, std::size_t dim, Rng& rng) {
  std::vector<EmbeddingVector> vecs;
  std::vector<Sentence> payloads;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> v(dim);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    vecs.push_back(EmbeddingVector::normalized(std::move(v)));
    payloads.push_back(Sentence{"s" + std::to_string(i), "f"});
  }
  return build_index(std::move(vecs), payloads);
}

void BM_Knn(benchmark::State& state) {
  Rng rng(1);
  const auto index = random_index(static_cast<std::size_t>(state.range(0)), 256, rng);
  const auto query = index.vector(0);
  for (auto _ : state) benchmark::DoNotOptimize(knn(query, index, 4));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Knn)->Arg(1000)->Arg(10000);

void BM_LearnBpe(benchmark::State& state) {
  const auto text = synthetic_text(2000);
  for (auto _ : state) benchmark::DoNotOptimize(learn_bpe(text, static_cast<std::size_t>(state.range(0))));
}
BENCHMARK(BM_LearnBpe)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);

void BM_ApplyBpe(benchmark::State& state) {
  const auto text = synthetic_text(2000);
  const BpeModel bpe = learn_bpe(text, 200);
  for (auto _ : state) {
    for (const auto& t : text) benchmark::DoNotOptimize(apply_bpe(bpe, t));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(text.size()));
}
BENCHMARK(BM_ApplyBpe)->Unit(benchmark::kMillisecond);

struct ModelFixture {
  SubwordCodec codec;
  ModelConfig cfg;
  std::vector<TrainingExample> batch;

  explicit ModelFixture(std::size_t dim) {
    const auto text = synthetic_text(500);
    const BpeModel bpe = learn_bpe(text, 100);
    codec = SubwordCodec(bpe, build_vocab(bpe, text));
    cfg.dim = dim;
    cfg.ffn_dim = 4 * dim;
    cfg.heads = 4;
    cfg.layers = 2;
    for (std::size_t i = 0; i + 1 < text.size() / 2 && batch.size() < 64; ++i) {
      TrainingExample ex;
      ex.in_f = codec.encode(text[i]);
      ex.in_e = codec.encode(text[i + text.size() / 2 + 1]);
      ex.target = {special::kLangE};
      const auto body = codec.encode(text[i + text.size() / 2]);
      ex.target.insert(ex.target.end(), body.begin(), body.end());
      ex.pair_index = i;
      batch.push_back(std::move(ex));
    }
  }
};

void BM_ForwardBackward(benchmark::State& state) {
  const ModelFixture f(static_cast<std::size_t>(state.range(0)));
  EditorModel model(f.cfg, f.codec);
  model.init_params(3);
  for (auto _ : state) benchmark::DoNotOptimize(model.loss_and_grads(f.batch, 0.1));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.batch.size()));
}
BENCHMARK(BM_ForwardBackward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Decode(benchmark::State& state) {
  const ModelFixture f(64);
  EditorModel model(f.cfg, f.codec);
  model.init_params(3);
  std::vector<std::string> sources;
  for (const auto& ex : f.batch) sources.push_back(f.codec.decode(ex.in_f));
  DecodeOptions opts;
  opts.beam = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(translate(model, sources, opts));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(sources.size()));
}
BENCHMARK(BM_Decode)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
