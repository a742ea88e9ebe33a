#include "bitref/model/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bitref/errors.hpp"

namespace bitref {

namespace {

using MatF = nn::Mat<float>;

struct Live {
  TokenSeq out;  // language id first
  double logp = 0.0;
  nn::DecoderCache<float> cache;
};

struct Candidate {
  double logp;
  std::size_t parent;
  TokenId token;
};

bool better(const Candidate& a, const Candidate& b) {
  if (a.logp != b.logp) return a.logp > b.logp;
  if (a.parent != b.parent) return a.parent < b.parent;
  return a.token < b.token;
}

std::size_t auto_max_len(const DecodeInput& in, const EditorModel& model, std::size_t requested) {
  std::size_t n = requested;
  if (n == 0) n = 2 * std::max(in.in_f.size(), in.in_e.size()) + 10;
  return std::min(n, model.config().max_len);
}

void decode_chunk(const EditorModel& model, const std::vector<DecodeInput>& inputs,
                  std::size_t begin, std::size_t end, const DecodeOptions& opts,
                  std::vector<Hypothesis>& results) {
  const auto& net = model.net();
  const std::size_t beam = opts.beam;
  const auto vocab = static_cast<TokenId>(model.codec().vocab().size());

  nn::PackedBatch batch;
  for (std::size_t i = begin; i < end; ++i) {
    const EncodedInput enc = encode_input(inputs[i].in_f, inputs[i].in_e, model.config().max_len);
    std::vector<std::uint8_t> lang(enc.lang_tags.size());
    for (std::size_t t = 0; t < lang.size(); ++t) lang[t] = enc.lang_tags[t] == special::kLangE;
    batch.add_source(enc.ids, enc.positions, lang);
  }
  const auto memories = net.encode(batch);
  const std::size_t n = end - begin;

  std::vector<std::vector<Live>> live(n);
  std::vector<std::vector<Hypothesis>> finished(n);
  std::vector<std::size_t> limit(n);
  std::vector<bool> done(n, false);
  for (std::size_t s = 0; s < n; ++s) {
    live[s].push_back(Live{{}, 0.0, net.new_cache()});
    limit[s] = auto_max_len(inputs[begin + s], model, opts.max_len);
  }

  auto finish = [](const Live& h, bool truncated) {
    Hypothesis out;
    out.lang = h.out.front();
    out.tokens.assign(h.out.begin() + 1, h.out.end());
    // EOS counts toward the length when the hypothesis ended normally.
    const double len = static_cast<double>(h.out.size() + (truncated ? 0 : 1));
    out.score = h.logp / len;
    out.truncated = truncated;
    return out;
  };

  for (std::size_t t = 0;; ++t) {
    std::vector<const nn::SourceMemory<float>*> srcs;
    std::vector<nn::DecoderCache<float>*> caches;
    std::vector<TokenId> tokens;
    for (std::size_t s = 0; s < n; ++s) {
      if (done[s]) continue;
      for (auto& h : live[s]) {
        srcs.push_back(&memories[s]);
        caches.push_back(&h.cache);
        tokens.push_back(h.out.empty() ? special::kBos : h.out.back());
      }
    }
    if (tokens.empty()) break;
    const MatF logp = net.step(srcs, caches, tokens);

    std::size_t row = 0;
    for (std::size_t s = 0; s < n; ++s) {
      if (done[s]) continue;
      std::vector<Candidate> cands;
      for (std::size_t p = 0; p < live[s].size(); ++p, ++row) {
        const auto& h = live[s][p];
        auto allowed = [&](TokenId id) {
          if (t == 0) return opts.force_lang ? id == *opts.force_lang : special::is_lang(id);
          return id == special::kEos || id >= special::kCount;
        };
        for (TokenId id = 0; id < vocab; ++id) {
          if (!allowed(id)) continue;
          cands.push_back({h.logp + static_cast<double>(logp(static_cast<Eigen::Index>(row), id)), p, id});
        }
      }
      const std::size_t keep = std::min(cands.size(), 2 * beam);
      std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                        better);
      cands.resize(keep);

      std::vector<Live> next;
      for (const auto& c : cands) {
        if (next.size() == beam) break;
        const Live& parent = live[s][c.parent];
        if (c.token == special::kEos) {
          if (finished[s].size() < beam) {
            Live tmp{parent.out, c.logp, {}};
            finished[s].push_back(finish(tmp, false));
          }
          continue;
        }
        Live h{parent.out, c.logp, parent.cache};
        h.out.push_back(c.token);
        next.push_back(std::move(h));
      }
      live[s] = std::move(next);

      const bool at_limit = t + 1 >= limit[s];
      if (finished[s].size() >= beam || live[s].empty() || at_limit) {
        if (at_limit || finished[s].empty()) {
          for (const auto& h : live[s]) finished[s].push_back(finish(h, true));
        }
        done[s] = true;
        live[s].clear();
      }
    }
  }

  for (std::size_t s = 0; s < n; ++s) {
    auto& f = finished[s];
    // Complete hypotheses win over truncated ones; then higher normalized score.
    const auto best = std::min_element(f.begin(), f.end(), [](const Hypothesis& a, const Hypothesis& b) {
      if (a.truncated != b.truncated) return !a.truncated;
      return a.score > b.score;
    });
    results[begin + s] = *best;
  }
}

}  // namespace

std::vector<Hypothesis> decode(const EditorModel& model, const std::vector<DecodeInput>& inputs,
                               const DecodeOptions& opts) {
  if (opts.beam == 0) fail(Errc::InvalidArgument, "beam must be >= 1");
  if (opts.force_lang && !special::is_lang(*opts.force_lang)) {
    fail(Errc::InvalidArgument, "forced first token must be a language id");
  }
  std::vector<Hypothesis> results(inputs.size());
  const std::size_t chunk = std::max<std::size_t>(1, opts.batch_size);
  for (std::size_t b = 0; b < inputs.size(); b += chunk) {
    decode_chunk(model, inputs, b, std::min(inputs.size(), b + chunk), opts, results);
  }
  return results;
}

Hypothesis decode(const EditorModel& model, const DecodeInput& input, const DecodeOptions& opts) {
  return decode(model, std::vector<DecodeInput>{input}, opts).front();
}

namespace {

/// Encodes pairs; inputs that do not fit are reported through `ok`.
std::vector<DecodeInput> prepare(const EditorModel& model, const Corpus& c, bool mask_src,
                                 std::vector<bool>& ok) {
  std::vector<DecodeInput> inputs;
  ok.assign(c.pairs.size(), false);
  for (std::size_t i = 0; i < c.pairs.size(); ++i) {
    DecodeInput in;
    in.in_f = mask_src ? TokenSeq{special::kMask} : model.codec().encode(c.pairs[i].src.text);
    in.in_e = model.codec().encode(c.pairs[i].tgt.text);
    if (in.in_f.size() + 1 + in.in_e.size() <= model.config().max_len) {
      ok[i] = true;
      inputs.push_back(std::move(in));
    }
  }
  return inputs;
}

std::optional<Sentence> to_sentence(const EditorModel& model, const TokenSeq& tokens,
                                    const std::string& lang) {
  const std::string text = model.codec().decode(tokens);
  if (!is_valid_sentence_text(text)) return std::nullopt;
  return make_sentence(text, lang);
}

}  // namespace

Corpus refine_corpus(const EditorModel& model, const Corpus& c, const DecodeOptions& opts,
                     RefineStats* stats) {
  RefineStats local;
  std::vector<bool> ok;
  const auto hyps = decode(model, prepare(model, c, false, ok), opts);
  Corpus out(c.src_lang, c.tgt_lang);
  out.pairs.reserve(c.pairs.size());
  std::size_t h = 0;
  for (std::size_t i = 0; i < c.pairs.size(); ++i) {
    BitextPair pair{c.pairs[i].src, c.pairs[i].tgt, std::nullopt};
    if (!ok[i]) {
      ++local.failures;
      out.pairs.push_back(std::move(pair));
      continue;
    }
    const Hypothesis& hyp = hyps[h++];
    if (hyp.truncated) ++local.truncated;
    const bool tgt_side = hyp.lang == special::kLangE;
    auto sent = to_sentence(model, hyp.tokens, tgt_side ? c.tgt_lang : c.src_lang);
    if (!sent) {
      ++local.failures;
    } else if (tgt_side) {
      pair.tgt = std::move(*sent);
      ++local.replaced_tgt;
    } else {
      pair.src = std::move(*sent);
      ++local.replaced_src;
    }
    out.pairs.push_back(std::move(pair));
  }
  if (stats) *stats = local;
  return out;
}

Corpus backtranslate_corpus(const EditorModel& nmt, const Corpus& c, const DecodeOptions& opts,
                            RefineStats* stats) {
  RefineStats local;
  DecodeOptions o = opts;
  o.force_lang = special::kLangF;
  std::vector<bool> ok;
  const auto hyps = decode(nmt, prepare(nmt, c, true, ok), o);
  Corpus out(c.src_lang, c.tgt_lang);
  out.pairs.reserve(c.pairs.size());
  std::size_t h = 0;
  for (std::size_t i = 0; i < c.pairs.size(); ++i) {
    BitextPair pair{c.pairs[i].src, c.pairs[i].tgt, std::nullopt};
    if (ok[i]) {
      const Hypothesis& hyp = hyps[h++];
      if (hyp.truncated) ++local.truncated;
      if (auto sent = to_sentence(nmt, hyp.tokens, c.src_lang)) {
        pair.src = std::move(*sent);
        ++local.replaced_src;
      } else {
        ++local.failures;
      }
    } else {
      ++local.failures;
    }
    out.pairs.push_back(std::move(pair));
  }
  if (stats) *stats = local;
  return out;
}

std::vector<std::string> translate(const EditorModel& nmt, const std::vector<std::string>& sources,
                                   const DecodeOptions& opts) {
  DecodeOptions o = opts;
  o.force_lang = special::kLangE;
  std::vector<DecodeInput> inputs;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    DecodeInput in{nmt.codec().encode(sources[i]), TokenSeq{special::kMask}};
    if (in.in_f.size() + 2 <= nmt.config().max_len) {
      where.push_back(i);
      inputs.push_back(std::move(in));
    }
  }
  const auto hyps = decode(nmt, inputs, o);
  std::vector<std::string> out(sources.size());
  for (std::size_t j = 0; j < hyps.size(); ++j) out[where[j]] = nmt.codec().decode(hyps[j].tokens);
  return out;
}

}  // namespace bitref
