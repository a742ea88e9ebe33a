#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "bitref/corpus.hpp"
#include "bitref/model/editor.hpp"

namespace bitref {

struct DecodeOptions {
  std::size_t beam = 1;
  /// Maximum output length in tokens, language id included; 0 picks
  /// 2 * longest input segment + 10, capped by the model's max_len.
  std::size_t max_len = 0;
  /// Restricts the first token to one language id.
  std::optional<TokenId> force_lang;
  /// Sources decoded together in one batch.
  std::size_t batch_size = 64;
};

struct DecodeInput {
  TokenSeq in_f;
  TokenSeq in_e;
};

struct Hypothesis {
  TokenId lang = special::kLangE;
  TokenSeq tokens;          // body, without the language id and EOS
  double score = 0.0;       // log-probability divided by output length
  bool truncated = false;   // max length reached before EOS
};

/// Beam search (greedy when beam == 1). The first token is always a language
/// id; later tokens are body tokens or EOS. Deterministic: ties go to the
/// lower token id, then to the earlier hypothesis.
std::vector<Hypothesis> decode(const EditorModel& model, const std::vector<DecodeInput>& inputs,
                               const DecodeOptions& opts);
Hypothesis decode(const EditorModel& model, const DecodeInput& input, const DecodeOptions& opts);

struct RefineStats {
  std::size_t replaced_src = 0;
  std::size_t replaced_tgt = 0;
  std::size_t failures = 0;   // original pair passed through
  std::size_t truncated = 0;
};

/// r(c): each pair is decoded; a LANG_E output replaces the target, a LANG_F
/// output replaces the source. Scores are dropped, size and order preserved.
Corpus refine_corpus(const EditorModel& model, const Corpus& c, const DecodeOptions& opts,
                     RefineStats* stats = nullptr);

/// b(c): regenerates every source from (MASK, target), keeping the target.
Corpus backtranslate_corpus(const EditorModel& nmt, const Corpus& c, const DecodeOptions& opts,
                            RefineStats* stats = nullptr);

/// Translates source sentences f -> e from (source, MASK). Inputs that fail
/// to encode yield an empty string.
std::vector<std::string> translate(const EditorModel& nmt, const std::vector<std::string>& sources,
                                   const DecodeOptions& opts);

}  // namespace bitref
