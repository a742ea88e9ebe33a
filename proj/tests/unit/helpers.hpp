#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bitref/dataset.hpp"
#include "bitref/model/config.hpp"
#include "bitref/random.hpp"
#include "bitref/tokenize.hpp"

namespace testing {

/// Vocabulary of specials plus w0..w{n-1}, no merges.
inline bitref::SubwordCodec tiny_codec(std::size_t words) {
  bitref::Vocab v;
  for (std::size_t i = 0; i < words; ++i) v.add("w" + std::to_string(i));
  return bitref::SubwordCodec(bitref::BpeModel{}, v);
}

inline bitref::ModelConfig tiny_config() {
  bitref::ModelConfig c;
  c.dim = 8;
  c.ffn_dim = 16;
  c.heads = 2;
  c.layers = 2;
  c.dropout = 0.0;
  c.label_smoothing = 0.0;
  c.max_len = 32;
  return c;
}

inline bitref::TokenSeq random_body(bitref::Rng& rng, std::size_t vocab, std::size_t min_len,
                                    std::size_t max_len) {
  const std::size_t n = min_len + rng.below(max_len - min_len + 1);
  bitref::TokenSeq s;
  for (std::size_t i = 0; i < n; ++i) {
    s.push_back(static_cast<bitref::TokenId>(bitref::special::kCount + rng.below(vocab - bitref::special::kCount)));
  }
  return s;
}

/// Random valid edit or MT example over ids [kCount, vocab).
inline bitref::TrainingExample random_example(bitref::Rng& rng, std::size_t vocab, std::size_t pair) {
  using namespace bitref;
  TrainingExample ex;
  ex.pair_index = pair;
  ex.in_f = random_body(rng, vocab, 1, 5);
  ex.in_e = random_body(rng, vocab, 1, 5);
  const bool to_e = rng.bernoulli(0.5);
  ex.target = {to_e ? special::kLangE : special::kLangF};
  const auto body = random_body(rng, vocab, 1, 5);
  ex.target.insert(ex.target.end(), body.begin(), body.end());
  if (rng.bernoulli(0.3)) {
    ex.task = Task::Mt;
    (to_e ? ex.in_e : ex.in_f) = {special::kMask};
  }
  return ex;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("bitref_test_" + tag);
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
