#include <doctest.h>

#include "bitref/errors.hpp"
#include "bitref/random.hpp"
#include "bitref/text.hpp"
#include "bitref/tokenize.hpp"
#include "helpers.hpp"

using namespace bitref;

namespace {

using Strings = std::vector<std::string>;

std::string random_ascii_sentence(Rng& rng) {
  static const std::string alphabet = "abcdeXYZ019.,!";
  const std::size_t words = 1 + rng.below(6);
  std::string s;
  for (std::size_t w = 0; w < words; ++w) {
    if (w) s += ' ';
    const std::size_t len = 1 + rng.below(7);
    for (std::size_t i = 0; i < len; ++i) s += alphabet[rng.below(alphabet.size())];
  }
  return s;
}

}  // namespace

TEST_SUITE("tokenize") {

TEST_CASE("the first merge is the most frequent pair") {
  // pairs in "aaab" twice: (a,a) x4, (a,b</w>) x2
  const BpeModel m = learn_bpe({"aaab aaab"}, 1);
  REQUIRE(m.num_merges() == 1);
  CHECK(m.merges()[0] == BpeModel::Merge{"a", "a"});
}

TEST_CASE("no merges segments into characters") {
  const BpeModel m = learn_bpe({"hello world"}, 0);
  CHECK(m.num_merges() == 0);
  CHECK(apply_bpe(m, "ab") == Strings{"a@@", "b"});
  CHECK(apply_bpe(BpeModel{}, "abc d") == Strings{"a@@", "b@@", "c", "d"});
}

TEST_CASE("a one-character corpus yields no merges") {
  CHECK(learn_bpe({"a"}, 5).merges().empty());
  CHECK_THROWS_AS(learn_bpe({}, 5), Error);
  CHECK_THROWS_AS(learn_bpe({"   "}, 5), Error);
}

TEST_CASE("merges are replayed in rank order") {
  const BpeModel m(std::vector<BpeModel::Merge>{{"a", "a"}});
  // aaab -> (aa) a b
  CHECK(apply_bpe(m, "aaab") == Strings{"aa@@", "a@@", "b"});
  const BpeModel m2(std::vector<BpeModel::Merge>{{"a", "a"}, {"aa", "a"}, {"b", "</w>"}});
  CHECK(m2.segment_word("aaab") == Strings{"aaa", "b</w>"});
  CHECK(apply_bpe(m2, "aaab") == Strings{"aaa@@", "b"});
}

TEST_CASE("learned merges reduce the symbol count monotonically") {
  const Strings corpus{"low lower lowest", "newer newest wider", "low low low"};
  std::size_t previous = SIZE_MAX;
  for (std::size_t merges = 0; merges <= 12; ++merges) {
    const BpeModel m = learn_bpe(corpus, merges);
    std::size_t symbols = 0;
    for (const auto& s : corpus) symbols += apply_bpe(m, s).size();
    CHECK(symbols <= previous);
    previous = symbols;
  }
}

TEST_CASE("detok removes continuation markers") {
  CHECK(detok({"he@@", "llo", "world"}) == "hello world");
  CHECK(detok({}) == "");
}

TEST_CASE("apply_bpe and detok round-trip") {
  Rng rng(17);
  Strings corpus;
  for (int i = 0; i < 200; ++i) corpus.push_back(random_ascii_sentence(rng));
  const BpeModel m = learn_bpe(corpus, 60);
  for (int i = 0; i < 300; ++i) {
    const std::string s = random_ascii_sentence(rng);
    CHECK(detok(apply_bpe(m, s)) == s);
  }
}

TEST_CASE("bpe files round-trip") {
  testing::TempDir dir("bpe_io");
  const BpeModel m = learn_bpe({"the cat sat on the mat", "the hat"}, 8);
  m.save(dir / "bpe.codes");
  CHECK(BpeModel::load(dir / "bpe.codes") == m);
}

TEST_CASE("vocab layout starts with the specials") {
  const BpeModel m;
  const Vocab v = build_vocab(m, {"x y x x"});
  CHECK(v.id_of("<pad>") == std::optional<TokenId>(special::kPad));
  CHECK(*v.id_of(v.token(special::kLangE)) == 6);
  CHECK(v.token(special::kLangE) == special::name(special::kLangE));
  CHECK(v.id_of("x") == std::optional<TokenId>(7));
  CHECK(v.id_of("y") == std::optional<TokenId>(8));
  CHECK_FALSE(v.id_of("z").has_value());
}

TEST_CASE("vocab ties break lexicographically") {
  const Vocab a = build_vocab(BpeModel{}, {"b a c"});
  const Vocab b = build_vocab(BpeModel{}, {"c b a"});
  CHECK(a == b);
  CHECK(a.token(7) == "a");
}

TEST_CASE("vocab files round-trip") {
  testing::TempDir dir("vocab_io");
  const BpeModel m = learn_bpe({"alpha beta gamma beta"}, 4);
  const Vocab v = build_vocab(m, {"alpha beta gamma beta"});
  v.save(dir / "vocab.txt");
  CHECK(Vocab::load(dir / "vocab.txt") == v);
}

TEST_CASE("codec maps unknown subwords to MASK") {
  const Strings corpus{"f1 f2 f3", "f2 f3"};
  const BpeModel m = learn_bpe(corpus, 10);
  const SubwordCodec codec(m, build_vocab(m, corpus));
  const TokenSeq ids = codec.encode("f1 f3");
  CHECK(codec.decode(ids) == "f1 f3");
  const TokenSeq unk = codec.encode("zz");
  for (TokenId id : unk) CHECK(id == special::kMask);
  CHECK(codec.decode({special::kLangE, ids[0], special::kEos}) == codec.decode({ids[0]}));
}

TEST_CASE("pretokenize splits punctuation") {
  CHECK(pretokenize("hello, world!") == "hello , world !");
}

TEST_CASE("text helpers") {
  CHECK(text::split_ws("  a \t b  ") == Strings{"a", "b"});
  CHECK(text::normalize_ws(" a   b ") == "a b");
  CHECK(text::format_real(1.06) == "1.06");
  double x = 0;
  CHECK(text::parse_real(text::format_real(0.1 + 0.2), x));
  CHECK(x == 0.1 + 0.2);
  CHECK_FALSE(text::is_valid_utf8("\xc3"));
}

}  // TEST_SUITE
