#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bitref/corpus.hpp"

namespace bitref {

/// Unit-norm, finite sentence embedding.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;
  /// L2-normalizes `values`. Throws NonFiniteValue or DivisionDegenerate (zero vector).
  static EmbeddingVector normalized(std::vector<float> values);

  std::size_t dim() const { return values_.size(); }
  std::span<const float> values() const { return values_; }
  float operator[](std::size_t i) const { return values_[i]; }

  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;

 private:
  explicit EmbeddingVector(std::vector<float> v) : values_(std::move(v)) {}
  std::vector<float> values_;
};

/// Dot product of unit vectors, clamped to [-1, 1]. Throws DimMismatch.
double cosine(const EmbeddingVector& u, const EmbeddingVector& v);

struct EmbedderConfig {
  std::size_t dim = 256;
  std::size_t min_n = 3;
  std::size_t max_n = 4;
  /// Optional token -> pivot map applied before hashing, so dictionary
  /// translations of each other embed to the same n-gram bag.
  std::vector<std::pair<std::string, std::string>> lexicon;
};

/// Hashed character n-gram bag. Each whitespace token is wrapped in "<" ">"
/// and its n-grams are hashed into `dim` buckets.
class Embedder {
 public:
  explicit Embedder(EmbedderConfig cfg = {});

  const EmbedderConfig& config() const { return cfg_; }
  std::size_t dim() const { return cfg_.dim; }
  /// Deterministic. Throws InvalidArgument for blank text.
  EmbeddingVector embed(std::string_view text) const;

 private:
  EmbedderConfig cfg_;
  std::unordered_map<std::string, std::string> pivot_;
};

class EmbeddingIndex {
 public:
  explicit EmbeddingIndex(std::size_t dim = 0) : dim_(dim) {}

  void add(EmbeddingVector v, Sentence payload);
  std::size_t size() const { return payloads_.size(); }
  bool empty() const { return payloads_.empty(); }
  std::size_t dim() const { return dim_; }
  const EmbeddingVector& vector(std::size_t i) const { return vectors_[i]; }
  const Sentence& payload(std::size_t i) const { return payloads_[i]; }

 private:
  std::size_t dim_;
  std::vector<EmbeddingVector> vectors_;
  std::vector<Sentence> payloads_;
};

EmbeddingIndex build_index(const std::vector<Sentence>& sentences, const Embedder& embedder);
/// Pairs precomputed vectors with their sentences; sizes must match.
EmbeddingIndex build_index(std::vector<EmbeddingVector> vectors, const std::vector<Sentence>& sentences);

/// Raw little-endian f32, row-major, no header. Re-normalizes every row.
std::vector<EmbeddingVector> load_embeddings(const std::filesystem::path& path, std::size_t dim);
void save_embeddings(const std::filesystem::path& path, const std::vector<EmbeddingVector>& vectors);

struct MinedCandidate {
  Sentence sentence;
  double cosine = 0.0;
  bool is_original = false;
  std::size_t index = 0;  // position in the index it was retrieved from

  friend bool operator==(const MinedCandidate&, const MinedCandidate&) = default;
};

/// Exact top-k by cosine, descending; equal cosines go to the lower index.
/// Results do not depend on `threads`. Throws EmptyIndex.
std::vector<MinedCandidate> knn(const EmbeddingVector& query, const EmbeddingIndex& index,
                                std::size_t k, std::size_t threads = 1);

/// Ratio margin: cos(x,y) over the mean of the k-NN cosines on both sides.
double margin_score(const EmbeddingVector& x, const EmbeddingVector& y,
                    const EmbeddingIndex& idx_x, const EmbeddingIndex& idx_y, std::size_t k);

struct PairCandidates {
  std::vector<MinedCandidate> src;  // candidate x_f' retrieved with the target sentence
  std::vector<MinedCandidate> tgt;  // candidate x_e' retrieved with the source sentence

  friend bool operator==(const PairCandidates&, const PairCandidates&) = default;
};

/// For every pair: src candidates = knn(embed(tgt), idx_src), tgt candidates =
/// knn(embed(src), idx_tgt). Candidates equal to the pair's own sentence are
/// flagged is_original and kept.
std::vector<PairCandidates> mine_candidates(const Corpus& corpus, const EmbeddingIndex& idx_src,
                                            const EmbeddingIndex& idx_tgt,
                                            const Embedder& embedder, std::size_t k,
                                            std::size_t threads = 1);
/// Same, with precomputed query vectors for the corpus sides.
std::vector<PairCandidates> mine_candidates(const Corpus& corpus,
                                            const std::vector<EmbeddingVector>& src_vectors,
                                            const std::vector<EmbeddingVector>& tgt_vectors,
                                            const EmbeddingIndex& idx_src,
                                            const EmbeddingIndex& idx_tgt, std::size_t k,
                                            std::size_t threads = 1);

/// JSONL: {"i": pair_index, "src": [{"text","cos","orig"}...], "tgt": [...]}.
void save_candidates(const std::filesystem::path& path, const std::vector<PairCandidates>& cands,
                     std::string_view src_lang, std::string_view tgt_lang);
std::vector<PairCandidates> load_candidates(const std::filesystem::path& path,
                                            std::string_view src_lang, std::string_view tgt_lang);

}  // namespace bitref
