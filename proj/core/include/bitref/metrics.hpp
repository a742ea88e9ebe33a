#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bitref/corpus.hpp"

namespace bitref {

using Tokens = std::vector<std::string>;

struct BleuReport {
  double score = 0.0;  // 0..100
  std::vector<double> ngram_precisions;
  double brevity_penalty = 1.0;
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
};

/// Corpus BLEU with clipped counts. With `smooth`, a zero precision at order
/// n > 1 becomes (matches + 1) / (total + 1). Throws LengthMismatch, EmptyHypSet.
BleuReport bleu(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs,
                std::size_t max_n = 4, bool smooth = true);

struct ChrFReport {
  double score = 0.0;  // 0..100
  double precision = 0.0;
  double recall = 0.0;
  std::size_t n_max = 6;
  double beta = 2.0;
};

/// Character n-gram F-score over space-stripped text, counts summed over the
/// corpus, precision and recall averaged over orders 1..n. Throws LengthMismatch.
ChrFReport chrf(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                std::size_t n = 6, double beta = 2.0);

enum class TerLabel : char { Correct = 'C', Sub = 'S', Del = 'D', Ins = 'I' };

struct TerLabelStats {
  std::size_t correct = 0, sub = 0, del = 0, ins = 0;

  std::size_t edits() const { return sub + del + ins; }
  TerLabelStats& operator+=(const TerLabelStats& o);
  friend bool operator==(const TerLabelStats&, const TerLabelStats&) = default;
};

struct TerAlignment {
  std::vector<TerLabel> labels;  // in alignment order
  TerLabelStats stats;
};

/// Levenshtein alignment without shifts; traceback prefers match, then
/// substitution, deletion (reference token missing), insertion.
TerAlignment ter_labels(const Tokens& hyp, const Tokens& ref);

/// Label statistics over index-aligned hypothesis/reference sentences.
TerLabelStats ter_corpus(const std::vector<std::string>& hyps, const std::vector<std::string>& refs);

struct EditFractionReport {
  double pct_src_edited = 0.0;
  double pct_tgt_edited = 0.0;
  double pct_both = 0.0;  // at least one side edited
};

/// Compares whitespace tokens of detokenized text. Throws LengthMismatch.
EditFractionReport edited_fraction(const Corpus& original, const Corpus& refined);

struct TypeTokenRatio {
  std::size_t tokens = 0;
  std::size_t types = 0;
  double ratio = 0.0;  // percent
};

TypeTokenRatio type_token_ratio(const std::vector<std::string>& sentences);

/// Whitespace tokenization of each sentence.
std::vector<Tokens> tokenize_ws(const std::vector<std::string>& sentences);

/// Ordered key=value lines, printable as "key=value" or TSV.
class Report {
 public:
  void add(std::string key, std::string value);
  void add(std::string key, double value);
  void add(std::string key, std::size_t value);
  void merge(const std::string& prefix, const Report& other);

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  std::string to_key_values() const;
  std::string to_tsv() const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

Report to_report(const BleuReport& r);
Report to_report(const ChrFReport& r);
Report to_report(const TerLabelStats& s);
Report to_report(const EditFractionReport& r);
Report to_report(const TypeTokenRatio& r);

}  // namespace bitref
