#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace bitref {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

/// Reserved ids. The order is fixed: both vocab files and checkpoints rely on it.
namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kSep = 3;
inline constexpr TokenId kMask = 4;
inline constexpr TokenId kLangF = 5;
inline constexpr TokenId kLangE = 6;
inline constexpr TokenId kCount = 7;

std::string_view name(TokenId id);
inline bool is_lang(TokenId id) { return id == kLangF || id == kLangE; }
}  // namespace special

inline constexpr std::string_view kContinuation = "@@";
inline constexpr std::string_view kEndOfWord = "</w>";

class BpeModel {
 public:
  using Merge = std::pair<std::string, std::string>;

  BpeModel() = default;
  explicit BpeModel(std::vector<Merge> merges);

  const std::vector<Merge>& merges() const { return merges_; }
  std::size_t num_merges() const { return merges_.size(); }

  /// Segments one word (no whitespace) into symbols; the last symbol carries
  /// the end-of-word marker.
  std::vector<std::string> segment_word(std::string_view word) const;

  void save(const std::filesystem::path& path) const;
  static BpeModel load(const std::filesystem::path& path);

  friend bool operator==(const BpeModel& a, const BpeModel& b) { return a.merges_ == b.merges_; }

 private:
  struct PairHash {
    std::size_t operator()(const Merge& m) const;
  };
  std::vector<Merge> merges_;
  std::unordered_map<Merge, std::size_t, PairHash> rank_;
};

/// Learns merges from whitespace-tokenized sentences. Ties in pair frequency
/// go to the lexicographically smallest (left, right). Throws EmptyCorpus.
BpeModel learn_bpe(const std::vector<std::string>& sentences, std::size_t num_merges);

/// Whitespace-tokenizes and segments; non-final pieces of a word end in "@@".
std::vector<std::string> apply_bpe(const BpeModel& model, std::string_view text);

/// Joins subwords, removing "@@" continuation markers.
std::string detok(const std::vector<std::string>& subwords);

/// Splits ASCII punctuation into separate whitespace-delimited tokens.
std::string pretokenize(std::string_view text);

class Vocab {
 public:
  /// Specials only.
  Vocab();

  std::optional<TokenId> id_of(std::string_view token) const;
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Appends a token (must be new); returns its id.
  TokenId add(std::string token);

  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);
  static Vocab from_tokens(std::vector<std::string> tokens);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

/// Joint vocabulary: specials at ids 0..6, then subwords by descending corpus
/// frequency, ties lexicographic.
Vocab build_vocab(const BpeModel& model, const std::vector<std::string>& sentences);

/// Text <-> token ids through a BPE model and vocabulary.
class SubwordCodec {
 public:
  SubwordCodec() = default;
  SubwordCodec(BpeModel bpe, Vocab vocab) : bpe_(std::move(bpe)), vocab_(std::move(vocab)) {}

  const BpeModel& bpe() const { return bpe_; }
  const Vocab& vocab() const { return vocab_; }

  /// Out-of-vocabulary subwords map to the MASK id.
  TokenSeq encode(std::string_view text) const;
  /// Special ids are skipped.
  std::string decode(const TokenSeq& ids) const;
  std::vector<std::string> subwords(const TokenSeq& ids) const;

 private:
  BpeModel bpe_;
  Vocab vocab_;
};

}  // namespace bitref
