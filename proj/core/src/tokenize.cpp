#include "bitref/tokenize.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <tuple>

#include "bitref/errors.hpp"
#include "bitref/text.hpp"

namespace bitref {

namespace special {
std::string_view name(TokenId id) {
  static constexpr std::string_view kNames[] = {"<pad>", "<s>",   "</s>", "<sep>",
                                                "<mask>", "<f>", "<e>"};
  if (id < 0 || id >= kCount) return {};
  return kNames[id];
}
}  // namespace special

std::size_t BpeModel::PairHash::operator()(const Merge& m) const {
  return text::fnv1a64(m.second, text::fnv1a64(m.first) ^ 0x5bd1e995);
}

BpeModel::BpeModel(std::vector<Merge> merges) : merges_(std::move(merges)) {
  for (std::size_t i = 0; i < merges_.size(); ++i) {
    if (!rank_.emplace(merges_[i], i).second) {
      fail(Errc::InvalidArgument, "duplicate merge '" + merges_[i].first + " " +
                                      merges_[i].second + "'");
    }
  }
}

namespace {

std::vector<std::string> initial_symbols(std::string_view word) {
  std::vector<std::string> syms;
  for (char32_t cp : text::decode_utf8(word)) {
    std::string s;
    text::append_utf8(s, cp);
    syms.push_back(std::move(s));
  }
  if (!syms.empty()) syms.back() += kEndOfWord;
  return syms;
}

// Merges every non-overlapping occurrence of (left, right), scanning left to right.
bool merge_in_place(std::vector<std::string>& syms, const std::string& left,
                    const std::string& right) {
  bool changed = false;
  std::vector<std::string> out;
  out.reserve(syms.size());
  for (std::size_t i = 0; i < syms.size();) {
    if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
      out.push_back(left + right);
      i += 2;
      changed = true;
    } else {
      out.push_back(std::move(syms[i]));
      ++i;
    }
  }
  syms = std::move(out);
  return changed;
}

}  // namespace

std::vector<std::string> BpeModel::segment_word(std::string_view word) const {
  auto syms = initial_symbols(word);
  // Lowest-rank pair first; a pair can only appear after the merges that build
  // its halves, so this equals replaying the merge list in order.
  while (syms.size() > 1) {
    std::size_t best_rank = SIZE_MAX;
    std::size_t best_pos = 0;
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      auto it = rank_.find(Merge{syms[i], syms[i + 1]});
      if (it != rank_.end() && it->second < best_rank) {
        best_rank = it->second;
        best_pos = i;
      }
    }
    if (best_rank == SIZE_MAX) break;
    const Merge m{syms[best_pos], syms[best_pos + 1]};
    merge_in_place(syms, m.first, m.second);
  }
  return syms;
}

void BpeModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  out << "#version: bpe-1\n";
  for (const auto& [l, r] : merges_) out << l << ' ' << r << '\n';
  if (!out) fail(Errc::IoError, "write failed for " + path.string());
}

BpeModel BpeModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::IoError, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "#version: bpe-1") {
    fail(Errc::BadMagic, "missing '#version: bpe-1' header in " + path.string());
  }
  std::vector<Merge> merges;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = text::split_fields(line, ' ');
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
      fail(Errc::MalformedRow, "expected 'left right'", line_no);
    }
    merges.emplace_back(std::string(fields[0]), std::string(fields[1]));
  }
  return BpeModel(std::move(merges));
}

BpeModel learn_bpe(const std::vector<std::string>& sentences, std::size_t num_merges) {
  std::map<std::string, std::int64_t> word_freq;
  for (const auto& s : sentences) {
    for (auto& w : text::split_ws(s)) ++word_freq[w];
  }
  if (word_freq.empty()) fail(Errc::EmptyCorpus, "no non-empty sentence to learn BPE from");

  using Pair = std::pair<std::string, std::string>;
  std::vector<std::vector<std::string>> words;
  std::vector<std::int64_t> freqs;
  for (const auto& [w, f] : word_freq) {
    words.push_back(initial_symbols(w));
    freqs.push_back(f);
  }

  std::map<Pair, std::int64_t> counts;
  std::map<Pair, std::set<std::size_t>> where;
  // ordered by (-count, left, right): begin() is the next merge
  std::set<std::tuple<std::int64_t, std::string, std::string>> queue;

  auto adjust = [&](const Pair& p, std::int64_t delta) {
    auto& c = counts[p];
    if (c > 0) queue.erase({-c, p.first, p.second});
    c += delta;
    if (c > 0) queue.insert({-c, p.first, p.second});
  };
  auto add_word = [&](std::size_t wi, int sign) {
    const auto& syms = words[wi];
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      Pair p{syms[i], syms[i + 1]};
      if (sign > 0) where[p].insert(wi);
      adjust(p, sign * freqs[wi]);
    }
  };
  for (std::size_t wi = 0; wi < words.size(); ++wi) add_word(wi, +1);

  std::vector<BpeModel::Merge> merges;
  while (merges.size() < num_merges && !queue.empty()) {
    const auto& [neg, left, right] = *queue.begin();
    if (-neg < 2) break;
    Pair best{left, right};
    merges.push_back(best);
    const auto affected = where[best];
    for (auto wi : affected) {
      add_word(wi, -1);
      merge_in_place(words[wi], best.first, best.second);
      add_word(wi, +1);
    }
    where.erase(best);
  }
  return BpeModel(std::move(merges));
}

std::vector<std::string> apply_bpe(const BpeModel& model, std::string_view text) {
  std::vector<std::string> out;
  for (const auto& word : text::split_ws(text)) {
    auto syms = model.segment_word(word);
    for (std::size_t i = 0; i < syms.size(); ++i) {
      if (i + 1 < syms.size()) {
        out.push_back(syms[i] + std::string(kContinuation));
      } else {
        auto& last = syms[i];
        last.resize(last.size() - kEndOfWord.size());
        out.push_back(std::move(last));
      }
    }
  }
  return out;
}

std::string detok(const std::vector<std::string>& subwords) {
  std::string out;
  bool glue = false;
  for (const auto& piece : subwords) {
    std::string_view p = piece;
    const bool cont = p.size() >= kContinuation.size() && p.ends_with(kContinuation);
    if (cont) p.remove_suffix(kContinuation.size());
    if (!out.empty() && !glue) out += ' ';
    out += p;
    glue = cont;
  }
  return out;
}

std::string pretokenize(std::string_view text) {
  std::string spaced;
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 0x80 && std::ispunct(u)) {
      spaced += ' ';
      spaced += c;
      spaced += ' ';
    } else {
      spaced += c;
    }
  }
  return text::normalize_ws(spaced);
}

Vocab::Vocab() {
  for (TokenId id = 0; id < special::kCount; ++id) add(std::string(special::name(id)));
}

std::optional<TokenId> Vocab::id_of(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::add(std::string token) {
  const auto id = static_cast<TokenId>(tokens_.size());
  if (!ids_.emplace(token, id).second) fail(Errc::InvalidArgument, "duplicate token '" + token + "'");
  tokens_.push_back(std::move(token));
  return id;
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < static_cast<std::size_t>(special::kCount)) {
    fail(Errc::InvalidArgument, "vocabulary lacks the reserved tokens");
  }
  for (TokenId id = 0; id < special::kCount; ++id) {
    if (tokens[id] != special::name(id)) {
      fail(Errc::InvalidArgument, "reserved token mismatch at id " + std::to_string(id));
    }
  }
  Vocab v;
  for (std::size_t i = special::kCount; i < tokens.size(); ++i) v.add(std::move(tokens[i]));
  return v;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\n';
  if (!out) fail(Errc::IoError, "write failed for " + path.string());
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::IoError, "cannot open " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = text::split_fields(line, '\t');
    if (fields.size() != 2 || fields[1] != std::to_string(tokens.size())) {
      fail(Errc::MalformedRow, "expected 'token<TAB>id' with consecutive ids", line_no);
    }
    tokens.emplace_back(fields[0]);
  }
  return from_tokens(std::move(tokens));
}

Vocab build_vocab(const BpeModel& model, const std::vector<std::string>& sentences) {
  std::map<std::string, std::int64_t> freq;
  for (const auto& s : sentences) {
    for (auto& piece : apply_bpe(model, s)) ++freq[piece];
  }
  std::vector<std::pair<std::string, std::int64_t>> ordered(freq.begin(), freq.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (auto& [tok, f] : ordered) {
    if (!v.id_of(tok)) v.add(tok);
  }
  return v;
}

TokenSeq SubwordCodec::encode(std::string_view text) const {
  TokenSeq ids;
  for (const auto& piece : apply_bpe(bpe_, text)) {
    ids.push_back(vocab_.id_of(piece).value_or(special::kMask));
  }
  return ids;
}

std::vector<std::string> SubwordCodec::subwords(const TokenSeq& ids) const {
  std::vector<std::string> out;
  for (auto id : ids) {
    if (id < special::kCount || static_cast<std::size_t>(id) >= vocab_.size()) continue;
    out.push_back(vocab_.token(id));
  }
  return out;
}

std::string SubwordCodec::decode(const TokenSeq& ids) const { return detok(subwords(ids)); }

}  // namespace bitref
