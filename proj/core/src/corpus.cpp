#include "bitref/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "bitref/errors.hpp"
#include "bitref/random.hpp"
#include "bitref/text.hpp"

namespace bitref {

bool is_valid_sentence_text(std::string_view text) {
  if (text.find_first_of("\t\r\n") != std::string_view::npos) return false;
  return !text::trim(text).empty();
}

Sentence make_sentence(std::string_view text, std::string_view lang) {
  if (!text::is_valid_utf8(text)) fail(Errc::EncodingError, "sentence is not valid UTF-8");
  if (!is_valid_sentence_text(text)) {
    fail(Errc::InvalidSentence, "sentence is blank or contains tab/CR/LF");
  }
  return Sentence{text::nfc(text), std::string(lang)};
}

void Corpus::add(std::string_view src, std::string_view tgt, std::optional<double> score) {
  if (score && !std::isfinite(*score)) fail(Errc::NonFiniteValue, "pair score", pairs.size());
  pairs.push_back(BitextPair{make_sentence(src, src_lang), make_sentence(tgt, tgt_lang), score});
}

void Corpus::append(const Corpus& other) {
  if (other.src_lang != src_lang || other.tgt_lang != tgt_lang) {
    fail(Errc::InvalidArgument, "cannot append corpus with different languages");
  }
  pairs.insert(pairs.end(), other.pairs.begin(), other.pairs.end());
}

Corpus Corpus::without_scores() const {
  Corpus out = *this;
  for (auto& p : out.pairs) p.score.reset();
  return out;
}

std::vector<std::string> Corpus::src_texts() const {
  std::vector<std::string> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.src.text);
  return out;
}

std::vector<std::string> Corpus::tgt_texts() const {
  std::vector<std::string> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.tgt.text);
  return out;
}

CorpusFormat parse_corpus_format(std::string_view name) {
  if (name == "tsv" || name == "TSV") return CorpusFormat::Tsv;
  if (name == "jsonl" || name == "JSONL") return CorpusFormat::Jsonl;
  fail(Errc::ConfigError, "unknown corpus format '" + std::string(name) + "'");
}

CorpusFormat guess_corpus_format(const std::filesystem::path& path) {
  return path.extension() == ".jsonl" ? CorpusFormat::Jsonl : CorpusFormat::Tsv;
}

namespace {

BitextPair parse_tsv_row(std::string_view line, std::size_t line_no, const Corpus& c) {
  const auto fields = text::split_fields(line, '\t');
  if (fields.size() != 2 && fields.size() != 3) {
    fail(Errc::MalformedRow, "expected 2 or 3 tab-separated fields", line_no);
  }
  BitextPair pair;
  if (!is_valid_sentence_text(fields[0]) || !is_valid_sentence_text(fields[1])) {
    fail(Errc::MalformedRow, "blank sentence field", line_no);
  }
  pair.src = Sentence{text::nfc(fields[0]), c.src_lang};
  pair.tgt = Sentence{text::nfc(fields[1]), c.tgt_lang};
  if (fields.size() == 3) {
    double v;
    if (!text::parse_real(fields[2], v)) fail(Errc::MalformedRow, "non-numeric score", line_no);
    pair.score = v;
  }
  return pair;
}

BitextPair parse_jsonl_row(std::string_view line, std::size_t line_no, const Corpus& c) {
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    fail(Errc::MalformedRow, "invalid JSON", line_no);
  }
  if (!obj.is_object() || !obj.contains("src") || !obj.contains("tgt") ||
      !obj["src"].is_string() || !obj["tgt"].is_string()) {
    fail(Errc::MalformedRow, "expected object with string keys \"src\" and \"tgt\"", line_no);
  }
  const auto src = obj["src"].get<std::string>();
  const auto tgt = obj["tgt"].get<std::string>();
  if (!text::is_valid_utf8(src) || !text::is_valid_utf8(tgt)) {
    fail(Errc::EncodingError, "invalid UTF-8", line_no);
  }
  if (!is_valid_sentence_text(src) || !is_valid_sentence_text(tgt)) {
    fail(Errc::MalformedRow, "blank sentence or reserved character", line_no);
  }
  BitextPair pair{Sentence{text::nfc(src), c.src_lang}, Sentence{text::nfc(tgt), c.tgt_lang}, {}};
  if (obj.contains("score") && !obj["score"].is_null()) {
    if (!obj["score"].is_number()) fail(Errc::MalformedRow, "non-numeric score", line_no);
    const double v = obj["score"].get<double>();
    if (!std::isfinite(v)) fail(Errc::MalformedRow, "non-finite score", line_no);
    pair.score = v;
  }
  return pair;
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format,
                   std::string_view src_lang, std::string_view tgt_lang) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::IoError, "cannot open " + path.string());
  Corpus corpus{std::string(src_lang), std::string(tgt_lang)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!text::is_valid_utf8(line)) fail(Errc::EncodingError, path.string(), line_no);
    if (text::trim(line).empty()) continue;
    corpus.pairs.push_back(format == CorpusFormat::Tsv ? parse_tsv_row(line, line_no, corpus)
                                                       : parse_jsonl_row(line, line_no, corpus));
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path, CorpusFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  for (const auto& p : corpus.pairs) {
    if (format == CorpusFormat::Tsv) {
      out << p.src.text << '\t' << p.tgt.text;
      if (p.score) out << '\t' << text::format_real(*p.score);
      out << '\n';
    } else {
      nlohmann::ordered_json obj;
      obj["src"] = p.src.text;
      obj["tgt"] = p.tgt.text;
      if (p.score) obj["score"] = *p.score;
      out << obj.dump() << '\n';
    }
  }
  out.flush();
  if (!out) fail(Errc::IoError, "write failed for " + path.string());
}

Pools split_pools(const Corpus& corpus, double low, double high) {
  if (!(low < high)) fail(Errc::InvalidArgument, "split_pools requires low < high");
  Pools pools{Corpus{corpus.src_lang, corpus.tgt_lang}, Corpus{corpus.src_lang, corpus.tgt_lang}, 0};
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& p = corpus.pairs[i];
    if (!p.score) fail(Errc::MissingScore, "pair has no alignment score", i);
    if (*p.score >= high) {
      pools.a.pairs.push_back(p);
    } else if (*p.score > low) {
      pools.b.pairs.push_back(p);
    } else {
      ++pools.discarded;
    }
  }
  return pools;
}

Corpus downsample(const Corpus& corpus, std::size_t n, std::uint64_t seed) {
  if (n > corpus.size()) {
    fail(Errc::SampleTooLarge, "requested " + std::to_string(n) + " of " +
                                   std::to_string(corpus.size()) + " pairs");
  }
  // partial Fisher-Yates over indices, then restore file order
  std::vector<std::size_t> idx(corpus.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + rng.below(idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  Corpus out{corpus.src_lang, corpus.tgt_lang};
  out.pairs.reserve(n);
  for (auto i : idx) out.pairs.push_back(corpus.pairs[i]);
  return out;
}

void NoiseSpec::validate() const {
  for (double p : {p_drop, p_swap, p_replace, p_misalign, pair_rate}) {
    if (!(p >= 0.0 && p <= 1.0)) fail(Errc::ConfigError, "noise probabilities must lie in [0,1]");
  }
}

bool NoiseSpec::is_zero() const {
  return pair_rate == 0.0 ||
         (p_drop == 0.0 && p_swap == 0.0 && p_replace == 0.0 && p_misalign == 0.0);
}

std::string toy_translate(std::string_view src) {
  auto tokens = text::split_ws(src);
  std::reverse(tokens.begin(), tokens.end());
  for (auto& t : tokens) {
    if (!t.empty() && t[0] == 'f') t[0] = 'e';
  }
  return text::join(tokens);
}

std::string toy_translate_back(std::string_view tgt) {
  auto tokens = text::split_ws(tgt);
  std::reverse(tokens.begin(), tokens.end());
  for (auto& t : tokens) {
    if (!t.empty() && t[0] == 'e') t[0] = 'f';
  }
  return text::join(tokens);
}

std::vector<std::pair<std::string, std::string>> toy_lexicon(std::size_t vocab_size) {
  std::vector<std::pair<std::string, std::string>> lex;
  lex.reserve(2 * vocab_size);
  for (std::size_t i = 0; i < vocab_size; ++i) {
    lex.emplace_back("f" + std::to_string(i), std::to_string(i));
    lex.emplace_back("e" + std::to_string(i), std::to_string(i));
  }
  return lex;
}

namespace {

class TokenSampler {
 public:
  TokenSampler(std::size_t vocab, double zipf) : cdf_(vocab) {
    double acc = 0.0;
    for (std::size_t r = 0; r < vocab; ++r) {
      acc += zipf > 0.0 ? 1.0 / std::pow(static_cast<double>(r + 1), zipf) : 1.0;
      cdf_[r] = acc;
    }
    for (auto& v : cdf_) v /= acc;
  }

  std::size_t draw(Rng& rng) const {
    const double u = rng.uniform();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return std::min<std::size_t>(it - cdf_.begin(), cdf_.size() - 1);
  }

 private:
  std::vector<double> cdf_;
};

void corrupt_tokens(std::vector<std::string>& tokens, const NoiseSpec& noise,
                    std::size_t vocab_size, Rng& rng) {
  if (noise.p_drop > 0.0) {
    std::vector<std::string> kept;
    for (auto& t : tokens) {
      if (!rng.bernoulli(noise.p_drop)) kept.push_back(std::move(t));
    }
    // never produce an empty sentence
    if (kept.empty()) kept.push_back(tokens.front());
    tokens = std::move(kept);
  }
  if (noise.p_swap > 0.0) {
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
      if (rng.bernoulli(noise.p_swap)) {
        std::swap(tokens[i], tokens[i + 1]);
        ++i;
      }
    }
  }
  if (noise.p_replace > 0.0) {
    for (auto& t : tokens) {
      if (!rng.bernoulli(noise.p_replace)) continue;
      std::string repl;
      do {
        repl = "e" + std::to_string(rng.below(vocab_size));
      } while (repl == t);
      t = std::move(repl);
    }
  }
}

}  // namespace

SyntheticCorpus gen_synthetic(const SyntheticSpec& spec) {
  if (spec.vocab_size < 2) fail(Errc::InvalidArgument, "vocab_size must be >= 2");
  if (spec.min_len < 1 || spec.min_len > spec.max_len) {
    fail(Errc::InvalidArgument, "length range must satisfy 1 <= min <= max");
  }
  spec.noise.validate();

  SyntheticCorpus out{Corpus{"f", "e"}, Corpus{"f", "e"}, {}};
  Rng rng(spec.seed);
  TokenSampler sampler(spec.vocab_size, spec.zipf);
  for (std::size_t i = 0; i < spec.n_pairs; ++i) {
    const std::size_t len = spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
    std::vector<std::string> tokens(len);
    for (auto& t : tokens) t = "f" + std::to_string(sampler.draw(rng));
    const std::string src = text::join(tokens);
    out.clean.pairs.push_back({Sentence{src, "f"}, Sentence{toy_translate(src), "e"}, {}});
  }

  out.noisy = out.clean;
  out.corrupted.assign(spec.n_pairs, false);
  if (spec.noise.is_zero()) return out;

  Rng noise_rng(spec.noise.seed);
  std::vector<std::size_t> eligible, misaligned;
  for (std::size_t i = 0; i < spec.n_pairs; ++i) {
    if (noise_rng.bernoulli(spec.noise.pair_rate)) eligible.push_back(i);
  }
  for (auto i : eligible) {
    if (noise_rng.bernoulli(spec.noise.p_misalign)) misaligned.push_back(i);
  }
  // rotate targets within a shuffled misaligned set, so no pair keeps its own
  if (misaligned.size() >= 2) {
    std::vector<std::size_t> order = misaligned;
    noise_rng.shuffle(order);
    for (std::size_t j = 0; j < order.size(); ++j) {
      out.noisy.pairs[order[j]].tgt = out.clean.pairs[order[(j + 1) % order.size()]].tgt;
    }
  }
  for (auto i : eligible) {
    auto tokens = text::split_ws(out.noisy.pairs[i].tgt.text);
    corrupt_tokens(tokens, spec.noise, spec.vocab_size, noise_rng);
    out.noisy.pairs[i].tgt.text = text::join(tokens);
  }
  for (std::size_t i = 0; i < spec.n_pairs; ++i) {
    out.corrupted[i] = out.noisy.pairs[i].tgt != out.clean.pairs[i].tgt;
  }
  return out;
}

}  // namespace bitref
