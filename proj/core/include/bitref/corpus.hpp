#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bitref {

/// A sentence in one language. Text is NFC-normalized, non-blank and free of
/// tab, CR and LF (those are reserved by the TSV format).
struct Sentence {
  std::string text;
  std::string lang;

  friend bool operator==(const Sentence&, const Sentence&) = default;
};

/// Validates and normalizes; throws InvalidSentence or EncodingError.
Sentence make_sentence(std::string_view text, std::string_view lang);
bool is_valid_sentence_text(std::string_view text);

struct BitextPair {
  Sentence src;
  Sentence tgt;
  std::optional<double> score;

  friend bool operator==(const BitextPair&, const BitextPair&) = default;
};

struct Corpus {
  std::string src_lang;
  std::string tgt_lang;
  std::vector<BitextPair> pairs;

  Corpus() = default;
  Corpus(std::string src, std::string tgt) : src_lang(std::move(src)), tgt_lang(std::move(tgt)) {}

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
  void add(std::string_view src, std::string_view tgt, std::optional<double> score = std::nullopt);
  /// Appends the pairs of `other`; languages must match.
  void append(const Corpus& other);
  Corpus without_scores() const;
  std::vector<std::string> src_texts() const;
  std::vector<std::string> tgt_texts() const;

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

enum class CorpusFormat { Tsv, Jsonl };

CorpusFormat parse_corpus_format(std::string_view name);
/// Picks the format from the file extension (".jsonl" or anything else = TSV).
CorpusFormat guess_corpus_format(const std::filesystem::path& path);

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format,
                   std::string_view src_lang, std::string_view tgt_lang);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path, CorpusFormat format);

struct Pools {
  Corpus a;  // score >= high
  Corpus b;  // low < score < high
  std::size_t discarded = 0;
};

/// Partitions a scored corpus by alignment score. Throws MissingScore(index).
Pools split_pools(const Corpus& corpus, double low, double high);

/// Uniform sample of exactly n pairs without replacement, original order kept.
Corpus downsample(const Corpus& corpus, std::size_t n, std::uint64_t seed);

/// Corruptions applied to the target side of synthetic pairs.
struct NoiseSpec {
  double p_drop = 0.0;
  double p_swap = 0.0;
  double p_replace = 0.0;
  double p_misalign = 0.0;
  /// Fraction of pairs eligible for any corruption; the token-level and
  /// misalignment probabilities apply within the eligible pairs.
  double pair_rate = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool is_zero() const;

  friend bool operator==(const NoiseSpec&, const NoiseSpec&) = default;
};

struct SyntheticSpec {
  std::size_t n_pairs = 1000;
  std::size_t vocab_size = 50;
  std::size_t min_len = 3;
  std::size_t max_len = 8;
  /// Zipf exponent for source token frequencies; 0 draws tokens uniformly.
  double zipf = 0.0;
  NoiseSpec noise;
  std::uint64_t seed = 1;
};

struct SyntheticCorpus {
  Corpus clean;
  Corpus noisy;
  /// Per pair: whether the noisy target differs from the clean one.
  std::vector<bool> corrupted;
};

/// Toy language pair: sources are random sequences over "f0".."f{V-1}" and the
/// correct target maps every fi to ei and reverses the sequence.
SyntheticCorpus gen_synthetic(const SyntheticSpec& spec);

/// The toy translation rule applied to a source sentence (f -> e).
std::string toy_translate(std::string_view src);
/// Inverse rule (e -> f).
std::string toy_translate_back(std::string_view tgt);
/// Bilingual lexicon of the toy language: token -> shared pivot ("f7"/"e7" -> "7").
std::vector<std::pair<std::string, std::string>> toy_lexicon(std::size_t vocab_size);

}  // namespace bitref
