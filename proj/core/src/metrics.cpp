#include "bitref/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include "bitref/errors.hpp"
#include "bitref/text.hpp"

namespace bitref {

namespace {

void check_lengths(std::size_t hyps, std::size_t refs) {
  if (hyps != refs) {
    fail(Errc::LengthMismatch,
         std::to_string(hyps) + " hypotheses vs " + std::to_string(refs) + " references");
  }
}

template <class Seq>
std::map<Seq, std::size_t> ngram_counts(const Seq& s, std::size_t n) {
  std::map<Seq, std::size_t> counts;
  if (s.size() < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    ++counts[Seq(s.begin() + static_cast<std::ptrdiff_t>(i),
                 s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace

BleuReport bleu(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs, std::size_t max_n,
                bool smooth) {
  check_lengths(hyps.size(), refs.size());
  if (hyps.empty()) fail(Errc::EmptyHypSet, "no hypotheses");
  if (max_n == 0) fail(Errc::InvalidArgument, "max_n must be >= 1");
  std::vector<std::size_t> matches(max_n, 0), totals(max_n, 0);
  BleuReport r;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    r.hyp_len += hyps[i].size();
    r.ref_len += refs[i].size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      const auto h = ngram_counts(hyps[i], n);
      const auto ref = ngram_counts(refs[i], n);
      for (const auto& [gram, c] : h) {
        totals[n - 1] += c;
        if (auto it = ref.find(gram); it != ref.end()) matches[n - 1] += std::min(c, it->second);
      }
    }
  }
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < max_n; ++n) {
    double p;
    if (matches[n] == 0 && smooth && n > 0) {
      p = 1.0 / (static_cast<double>(totals[n]) + 1.0);
    } else {
      p = totals[n] == 0 ? 0.0 : static_cast<double>(matches[n]) / static_cast<double>(totals[n]);
    }
    r.ngram_precisions.push_back(p);
    if (p == 0.0) zero = true;
    else log_sum += std::log(p);
  }
  if (r.hyp_len == 0) {
    r.brevity_penalty = 0.0;
  } else if (r.hyp_len < r.ref_len) {
    r.brevity_penalty = std::exp(1.0 - static_cast<double>(r.ref_len) / static_cast<double>(r.hyp_len));
  }
  r.score = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / static_cast<double>(max_n));
  return r;
}

ChrFReport chrf(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                std::size_t n, double beta) {
  check_lengths(hyps.size(), refs.size());
  if (n == 0) fail(Errc::InvalidArgument, "chrF order must be >= 1");
  std::vector<std::size_t> match(n, 0), hyp_total(n, 0), ref_total(n, 0);
  auto chars = [](const std::string& s) {
    std::u32string out;
    for (char32_t c : text::decode_utf8(s)) {
      if (c != U' ' && c != U'\t') out.push_back(c);
    }
    return out;
  };
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto h = chars(hyps[i]);
    const auto r = chars(refs[i]);
    for (std::size_t k = 1; k <= n; ++k) {
      const auto hc = ngram_counts(h, k);
      const auto rc = ngram_counts(r, k);
      for (const auto& [g, c] : hc) {
        hyp_total[k - 1] += c;
        if (auto it = rc.find(g); it != rc.end()) match[k - 1] += std::min(c, it->second);
      }
      for (const auto& [g, c] : rc) ref_total[k - 1] += c;
    }
  }
  ChrFReport rep;
  rep.n_max = n;
  rep.beta = beta;
  double p_sum = 0.0, r_sum = 0.0;
  std::size_t orders = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (hyp_total[k] == 0 && ref_total[k] == 0) continue;
    ++orders;
    if (hyp_total[k] > 0) p_sum += static_cast<double>(match[k]) / static_cast<double>(hyp_total[k]);
    if (ref_total[k] > 0) r_sum += static_cast<double>(match[k]) / static_cast<double>(ref_total[k]);
  }
  if (orders == 0) {
    // both sides empty everywhere
    rep.precision = rep.recall = 1.0;
    rep.score = 100.0;
    return rep;
  }
  rep.precision = p_sum / static_cast<double>(orders);
  rep.recall = r_sum / static_cast<double>(orders);
  const double b2 = beta * beta;
  const double denom = b2 * rep.precision + rep.recall;
  rep.score = denom > 0.0 ? 100.0 * (1.0 + b2) * rep.precision * rep.recall / denom : 0.0;
  return rep;
}

TerLabelStats& TerLabelStats::operator+=(const TerLabelStats& o) {
  correct += o.correct;
  sub += o.sub;
  del += o.del;
  ins += o.ins;
  return *this;
}

TerAlignment ter_labels(const Tokens& hyp, const Tokens& ref) {
  const std::size_t H = hyp.size(), R = ref.size();
  // d[i][j]: distance between ref[0..i) and hyp[0..j)
  std::vector<std::size_t> d((R + 1) * (H + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (H + 1) + j]; };
  for (std::size_t i = 0; i <= R; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= H; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= R; ++i) {
    for (std::size_t j = 1; j <= H; ++j) {
      const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }
  TerAlignment out;
  std::size_t i = R, j = H;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] && at(i, j) == at(i - 1, j - 1)) {
      out.labels.push_back(TerLabel::Correct);
      ++out.stats.correct;
      --i, --j;
    } else if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + 1) {
      out.labels.push_back(TerLabel::Sub);
      ++out.stats.sub;
      --i, --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      out.labels.push_back(TerLabel::Del);
      ++out.stats.del;
      --i;
    } else {
      out.labels.push_back(TerLabel::Ins);
      ++out.stats.ins;
      --j;
    }
  }
  std::reverse(out.labels.begin(), out.labels.end());
  return out;
}

std::vector<Tokens> tokenize_ws(const std::vector<std::string>& sentences) {
  std::vector<Tokens> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) out.push_back(text::split_ws(s));
  return out;
}

TerLabelStats ter_corpus(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  check_lengths(hyps.size(), refs.size());
  TerLabelStats total;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    total += ter_labels(text::split_ws(hyps[i]), text::split_ws(refs[i])).stats;
  }
  return total;
}

EditFractionReport edited_fraction(const Corpus& original, const Corpus& refined) {
  check_lengths(refined.pairs.size(), original.pairs.size());
  EditFractionReport r;
  if (original.pairs.empty()) return r;
  std::size_t src = 0, tgt = 0, any = 0;
  auto edited = [](const Sentence& a, const Sentence& b) {
    return ter_labels(text::split_ws(a.text), text::split_ws(b.text)).stats.edits() > 0;
  };
  for (std::size_t i = 0; i < original.pairs.size(); ++i) {
    const bool s = edited(refined.pairs[i].src, original.pairs[i].src);
    const bool t = edited(refined.pairs[i].tgt, original.pairs[i].tgt);
    src += s;
    tgt += t;
    any += s || t;
  }
  const double n = static_cast<double>(original.pairs.size());
  r.pct_src_edited = 100.0 * static_cast<double>(src) / n;
  r.pct_tgt_edited = 100.0 * static_cast<double>(tgt) / n;
  r.pct_both = 100.0 * static_cast<double>(any) / n;
  return r;
}

TypeTokenRatio type_token_ratio(const std::vector<std::string>& sentences) {
  TypeTokenRatio r;
  std::unordered_set<std::string> types;
  for (const auto& s : sentences) {
    for (auto& tok : text::split_ws(s)) {
      ++r.tokens;
      types.insert(std::move(tok));
    }
  }
  r.types = types.size();
  r.ratio = r.tokens == 0 ? 0.0 : 100.0 * static_cast<double>(r.types) / static_cast<double>(r.tokens);
  return r;
}

void Report::add(std::string key, std::string value) {
  entries_.emplace_back(std::move(key), std::move(value));
}
void Report::add(std::string key, double value) { add(std::move(key), text::format_real(value)); }
void Report::add(std::string key, std::size_t value) { add(std::move(key), std::to_string(value)); }

void Report::merge(const std::string& prefix, const Report& other) {
  for (const auto& [k, v] : other.entries_) add(prefix.empty() ? k : prefix + "." + k, v);
}

std::string Report::to_key_values() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
  return out;
}

std::string Report::to_tsv() const {
  std::string out = "key\tvalue\n";
  for (const auto& [k, v] : entries_) out += k + "\t" + v + "\n";
  return out;
}

Report to_report(const BleuReport& r) {
  Report rep;
  rep.add("score", r.score);
  for (std::size_t n = 0; n < r.ngram_precisions.size(); ++n) {
    rep.add("p" + std::to_string(n + 1), r.ngram_precisions[n]);
  }
  rep.add("bp", r.brevity_penalty);
  rep.add("hyp_len", r.hyp_len);
  rep.add("ref_len", r.ref_len);
  return rep;
}

Report to_report(const ChrFReport& r) {
  Report rep;
  rep.add("score", r.score);
  rep.add("precision", r.precision);
  rep.add("recall", r.recall);
  rep.add("n", r.n_max);
  rep.add("beta", r.beta);
  return rep;
}

Report to_report(const TerLabelStats& s) {
  Report rep;
  rep.add("C", s.correct);
  rep.add("S", s.sub);
  rep.add("D", s.del);
  rep.add("I", s.ins);
  return rep;
}

Report to_report(const EditFractionReport& r) {
  Report rep;
  rep.add("src", r.pct_src_edited);
  rep.add("tgt", r.pct_tgt_edited);
  rep.add("both", r.pct_both);
  return rep;
}

Report to_report(const TypeTokenRatio& r) {
  Report rep;
  rep.add("tokens", r.tokens);
  rep.add("types", r.types);
  rep.add("ratio", r.ratio);
  return rep;
}

}  // namespace bitref
