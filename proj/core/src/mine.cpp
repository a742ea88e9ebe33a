#include "bitref/mine.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "bitref/errors.hpp"
#include "bitref/text.hpp"

namespace bitref {

EmbeddingVector EmbeddingVector::normalized(std::vector<float> values) {
  double sq = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) fail(Errc::NonFiniteValue, "embedding entry", i);
    sq += static_cast<double>(values[i]) * values[i];
  }
  if (!(sq > 0.0)) fail(Errc::DivisionDegenerate, "cannot normalize a zero vector");
  const double inv = 1.0 / std::sqrt(sq);
  for (auto& v : values) v = static_cast<float>(v * inv);
  return EmbeddingVector(std::move(values));
}

namespace {

double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

double clamp_cos(double c) { return std::clamp(c, -1.0, 1.0); }

struct Scored {
  double cos;
  std::size_t idx;
};

// Higher cosine first, then lower index.
bool ranks_before(const Scored& a, const Scored& b) {
  if (a.cos != b.cos) return a.cos > b.cos;
  return a.idx < b.idx;
}

void scan_shard(const EmbeddingVector& q, const EmbeddingIndex& index, std::size_t begin,
                std::size_t end, std::size_t k, std::vector<Scored>& heap) {
  // heap.front() is the worst of the current top-k
  heap.clear();
  heap.reserve(k + 1);
  for (std::size_t i = begin; i < end; ++i) {
    const Scored s{clamp_cos(dot(q.values(), index.vector(i).values())), i};
    if (heap.size() < k) {
      heap.push_back(s);
      std::push_heap(heap.begin(), heap.end(), ranks_before);
    } else if (ranks_before(s, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), ranks_before);
      heap.back() = s;
      std::push_heap(heap.begin(), heap.end(), ranks_before);
    }
  }
}

template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    fn(0, n, 0);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t b = t * chunk, e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e, t] { fn(b, e, t); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

double cosine(const EmbeddingVector& u, const EmbeddingVector& v) {
  if (u.dim() != v.dim()) {
    fail(Errc::DimMismatch, std::to_string(u.dim()) + " vs " + std::to_string(v.dim()));
  }
  return clamp_cos(dot(u.values(), v.values()));
}

Embedder::Embedder(EmbedderConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.dim == 0) fail(Errc::ConfigError, "embedding dimension must be positive");
  if (cfg_.min_n == 0 || cfg_.min_n > cfg_.max_n) fail(Errc::ConfigError, "bad n-gram range");
  for (const auto& [tok, piv] : cfg_.lexicon) pivot_[tok] = piv;
}

EmbeddingVector Embedder::embed(std::string_view sentence) const {
  std::vector<float> bag(cfg_.dim, 0.0f);
  bool any = false;
  for (const auto& raw : text::split_ws(sentence)) {
    auto it = pivot_.find(raw);
    const std::string& tok = it == pivot_.end() ? raw : it->second;
    std::vector<char32_t> cps{U'<'};
    const auto body = text::decode_utf8(tok);
    cps.insert(cps.end(), body.begin(), body.end());
    cps.push_back(U'>');
    for (std::size_t n = cfg_.min_n; n <= cfg_.max_n; ++n) {
      if (cps.size() < n) continue;
      for (std::size_t i = 0; i + n <= cps.size(); ++i) {
        std::string gram;
        for (std::size_t j = i; j < i + n; ++j) text::append_utf8(gram, cps[j]);
        bag[text::fnv1a64(gram) % cfg_.dim] += 1.0f;
        any = true;
      }
    }
    // tokens shorter than min_n even with boundaries still contribute
    if (cps.size() < cfg_.min_n) {
      std::string gram;
      for (auto cp : cps) text::append_utf8(gram, cp);
      bag[text::fnv1a64(gram) % cfg_.dim] += 1.0f;
      any = true;
    }
  }
  if (!any) fail(Errc::InvalidArgument, "cannot embed blank text");
  return EmbeddingVector::normalized(std::move(bag));
}

void EmbeddingIndex::add(EmbeddingVector v, Sentence payload) {
  if (dim_ == 0 && vectors_.empty()) dim_ = v.dim();
  if (v.dim() != dim_) fail(Errc::DimMismatch, "index vector", vectors_.size());
  vectors_.push_back(std::move(v));
  payloads_.push_back(std::move(payload));
}

EmbeddingIndex build_index(const std::vector<Sentence>& sentences, const Embedder& embedder) {
  EmbeddingIndex idx(embedder.dim());
  for (const auto& s : sentences) idx.add(embedder.embed(s.text), s);
  return idx;
}

EmbeddingIndex build_index(std::vector<EmbeddingVector> vectors,
                           const std::vector<Sentence>& sentences) {
  if (vectors.size() != sentences.size()) {
    fail(Errc::LengthMismatch, std::to_string(vectors.size()) + " vectors for " +
                                   std::to_string(sentences.size()) + " sentences");
  }
  EmbeddingIndex idx(vectors.empty() ? 0 : vectors.front().dim());
  for (std::size_t i = 0; i < vectors.size(); ++i) idx.add(std::move(vectors[i]), sentences[i]);
  return idx;
}

std::vector<EmbeddingVector> load_embeddings(const std::filesystem::path& path, std::size_t dim) {
  if (dim == 0) fail(Errc::ConfigError, "--dim must be positive");
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::IoError, "cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % (4 * dim) != 0) {
    fail(Errc::BadLength, std::to_string(bytes.size()) + " bytes is not a multiple of 4*" +
                              std::to_string(dim));
  }
  const std::size_t rows = bytes.size() / (4 * dim);
  std::vector<EmbeddingVector> out;
  out.reserve(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<float> v(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      std::uint32_t bits;
      std::memcpy(&bits, bytes.data() + 4 * (r * dim + j), 4);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
      std::memcpy(&v[j], &bits, 4);
      if (!std::isfinite(v[j])) fail(Errc::NonFiniteValue, "embedding value", r * dim + j);
    }
    out.push_back(EmbeddingVector::normalized(std::move(v)));
  }
  return out;
}

void save_embeddings(const std::filesystem::path& path, const std::vector<EmbeddingVector>& vectors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  for (const auto& v : vectors) {
    for (float f : v.values()) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
      out.write(reinterpret_cast<const char*>(&bits), 4);
    }
  }
  if (!out) fail(Errc::IoError, "write failed for " + path.string());
}

std::vector<MinedCandidate> knn(const EmbeddingVector& query, const EmbeddingIndex& index,
                                std::size_t k, std::size_t threads) {
  if (index.empty()) fail(Errc::EmptyIndex, "knn on an empty index");
  if (k == 0) fail(Errc::InvalidArgument, "k must be >= 1");
  if (query.dim() != index.dim()) {
    fail(Errc::DimMismatch, std::to_string(query.dim()) + " vs " + std::to_string(index.dim()));
  }
  const std::size_t shards = std::max<std::size_t>(1, std::min(threads, index.size()));
  std::vector<std::vector<Scored>> heaps(shards);
  parallel_for(index.size(), shards, [&](std::size_t b, std::size_t e, std::size_t t) {
    scan_shard(query, index, b, e, k, heaps[t]);
  });
  std::vector<Scored> merged;
  for (auto& h : heaps) merged.insert(merged.end(), h.begin(), h.end());
  std::sort(merged.begin(), merged.end(), ranks_before);
  if (merged.size() > k) merged.resize(k);

  std::vector<MinedCandidate> out;
  out.reserve(merged.size());
  for (const auto& s : merged) out.push_back({index.payload(s.idx), s.cos, false, s.idx});
  return out;
}

double margin_score(const EmbeddingVector& x, const EmbeddingVector& y,
                    const EmbeddingIndex& idx_x, const EmbeddingIndex& idx_y, std::size_t k) {
  auto mean_nn = [k](const EmbeddingVector& q, const EmbeddingIndex& idx) {
    const auto nn = knn(q, idx, k);
    double sum = 0.0;
    for (const auto& c : nn) sum += c.cosine;
    return sum / (2.0 * static_cast<double>(nn.size()));
  };
  const double denom = mean_nn(x, idx_y) + mean_nn(y, idx_x);
  if (denom <= 1e-9) fail(Errc::DivisionDegenerate, "margin denominator is not positive");
  return cosine(x, y) / denom;
}

std::vector<PairCandidates> mine_candidates(const Corpus& corpus,
                                            const std::vector<EmbeddingVector>& src_vectors,
                                            const std::vector<EmbeddingVector>& tgt_vectors,
                                            const EmbeddingIndex& idx_src,
                                            const EmbeddingIndex& idx_tgt, std::size_t k,
                                            std::size_t threads) {
  if (src_vectors.size() != corpus.size() || tgt_vectors.size() != corpus.size()) {
    fail(Errc::LengthMismatch, "query vectors do not match corpus size");
  }
  std::vector<PairCandidates> out(corpus.size());
  parallel_for(corpus.size(), threads, [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t i = b; i < e; ++i) {
      const auto& pair = corpus.pairs[i];
      auto& slot = out[i];
      slot.src = knn(tgt_vectors[i], idx_src, k);
      slot.tgt = knn(src_vectors[i], idx_tgt, k);
      for (auto& c : slot.src) c.is_original = c.sentence.text == pair.src.text;
      for (auto& c : slot.tgt) c.is_original = c.sentence.text == pair.tgt.text;
    }
  });
  return out;
}

std::vector<PairCandidates> mine_candidates(const Corpus& corpus, const EmbeddingIndex& idx_src,
                                            const EmbeddingIndex& idx_tgt,
                                            const Embedder& embedder, std::size_t k,
                                            std::size_t threads) {
  std::vector<EmbeddingVector> src_vecs, tgt_vecs;
  src_vecs.reserve(corpus.size());
  tgt_vecs.reserve(corpus.size());
  for (const auto& p : corpus.pairs) {
    src_vecs.push_back(embedder.embed(p.src.text));
    tgt_vecs.push_back(embedder.embed(p.tgt.text));
  }
  return mine_candidates(corpus, src_vecs, tgt_vecs, idx_src, idx_tgt, k, threads);
}

namespace {

nlohmann::ordered_json candidates_to_json(const std::vector<MinedCandidate>& cands) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& c : cands) {
    nlohmann::ordered_json o;
    o["text"] = c.sentence.text;
    o["cos"] = c.cosine;
    o["orig"] = c.is_original;
    o["idx"] = c.index;
    arr.push_back(std::move(o));
  }
  return arr;
}

std::vector<MinedCandidate> candidates_from_json(const nlohmann::json& arr, std::string_view lang,
                                                 std::size_t line_no) {
  if (!arr.is_array()) fail(Errc::MalformedRow, "candidate list must be an array", line_no);
  std::vector<MinedCandidate> out;
  for (const auto& o : arr) {
    if (!o.is_object() || !o.contains("text") || !o.contains("cos") || !o.contains("orig")) {
      fail(Errc::MalformedRow, "candidate needs text, cos, orig", line_no);
    }
    MinedCandidate c;
    c.sentence = Sentence{o["text"].get<std::string>(), std::string(lang)};
    c.cosine = o["cos"].get<double>();
    c.is_original = o["orig"].get<bool>();
    c.index = o.value("idx", std::size_t{0});
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace

void save_candidates(const std::filesystem::path& path, const std::vector<PairCandidates>& cands,
                     std::string_view, std::string_view) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  for (std::size_t i = 0; i < cands.size(); ++i) {
    nlohmann::ordered_json o;
    o["i"] = i;
    o["src"] = candidates_to_json(cands[i].src);
    o["tgt"] = candidates_to_json(cands[i].tgt);
    out << o.dump() << '\n';
  }
  if (!out) fail(Errc::IoError, "write failed for " + path.string());
}

std::vector<PairCandidates> load_candidates(const std::filesystem::path& path,
                                            std::string_view src_lang, std::string_view tgt_lang) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::IoError, "cannot open " + path.string());
  std::vector<PairCandidates> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    nlohmann::json o;
    try {
      o = nlohmann::json::parse(line);
      if (!o.contains("i") || o["i"].get<std::size_t>() != out.size()) {
        fail(Errc::MalformedRow, "pair indices must be consecutive from 0", line_no);
      }
      out.push_back({candidates_from_json(o.at("src"), src_lang, line_no),
                     candidates_from_json(o.at("tgt"), tgt_lang, line_no)});
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::MalformedRow, e.what(), line_no);
    }
  }
  return out;
}

}  // namespace bitref
