#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/StdVector>

#include "bitref/tokenize.hpp"

namespace bitref::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<Mat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const Mat<T>>;

/// Flat parameter/gradient storage. The base address is aligned and every
/// tensor starts on a 64-byte boundary, so vectorized reductions take the
/// same path on every run and results are bit-reproducible.
template <class T>
using ParamVector = std::vector<T, Eigen::aligned_allocator<T>>;
inline constexpr std::size_t kTensorAlignBytes = 64;

struct TensorInfo {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;  // in elements

  std::size_t size() const { return rows * cols; }
  friend bool operator==(const TensorInfo&, const TensorInfo&) = default;
};

/// Named tensors in one flat buffer, each padded to kTensorAlignBytes.
class ParamLayout {
 public:
  /// `align` is in elements.
  std::size_t add(std::string name, std::size_t rows, std::size_t cols, std::size_t align = 16);
  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  const TensorInfo& operator[](std::size_t i) const { return tensors_[i]; }
  std::size_t total() const { return total_; }

  friend bool operator==(const ParamLayout&, const ParamLayout&) = default;

 private:
  std::vector<TensorInfo> tensors_;
  std::size_t total_ = 0;
};

struct Architecture {
  std::size_t vocab = 0;
  std::size_t dim = 64;
  std::size_t ffn_dim = 256;
  std::size_t heads = 4;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  double dropout = 0.1;
  double attn_dropout = 0.0;
  double relu_dropout = 0.0;
  std::size_t max_positions = 1024;
};

/// Sequences packed row-wise without padding. Encoder rows carry a segment
/// language (0 = f, 1 = e) and a position id; decoder rows carry the shifted
/// input and the prediction target.
struct PackedBatch {
  std::vector<TokenId> enc_ids;
  std::vector<std::int32_t> enc_pos;
  std::vector<std::uint8_t> enc_lang;
  std::vector<std::size_t> enc_off, enc_len;

  std::vector<TokenId> dec_in, dec_out;
  std::vector<std::size_t> dec_off, dec_len;

  std::vector<double> weight;  // per sequence

  std::size_t size() const { return enc_off.size(); }
  void add_source(const TokenSeq& ids, const std::vector<std::int32_t>& pos,
                  const std::vector<std::uint8_t>& lang);
  /// Decoder side: inputs BOS + target, outputs target + EOS.
  void add_target(const TokenSeq& target, double weight);
};

struct LossStats {
  double loss = 0.0;           // weighted token-mean label-smoothed NLL
  double nll = 0.0;            // weighted token-mean NLL without smoothing
  double weight_tokens = 0.0;  // sum of per-token weights
};

template <class T>
struct SourceMemory {
  Mat<T> memory;                  // encoder output, len x dim
  std::vector<Mat<T>> cross_k;    // per decoder layer
  std::vector<Mat<T>> cross_v;
};

template <class T>
struct DecoderCache {
  std::vector<Mat<T>> self_k;  // per layer, steps x dim
  std::vector<Mat<T>> self_v;
  std::size_t steps = 0;
};

/// Pre-norm transformer encoder-decoder with tied token embeddings
/// (encoder input, decoder input and output projection share one tensor),
/// sinusoidal positions and learned segment-language embeddings on the encoder.
template <class T>
class Transformer {
 public:
  explicit Transformer(const Architecture& arch);

  const Architecture& arch() const { return arch_; }
  const ParamLayout& layout() const { return layout_; }
  ParamVector<T>& params() { return params_; }
  const ParamVector<T>& params() const { return params_; }

  void init_params(std::uint64_t seed);

  /// Loss over a packed batch. When `grad` is non-null it must have
  /// layout().total() entries; gradients of `loss` are accumulated into it.
  /// Dropout is active only when `train` is set.
  LossStats forward_backward(const PackedBatch& batch, double label_smoothing, bool train,
                             std::uint64_t dropout_seed, ParamVector<T>* grad) const;

  /// Encoder pass for every source in `batch` (decoder fields ignored).
  std::vector<SourceMemory<T>> encode(const PackedBatch& batch) const;
  DecoderCache<T> new_cache() const;
  /// One incremental decoder step for several hypotheses at once; returns
  /// log-probabilities, one row per hypothesis.
  Mat<T> step(const std::vector<const SourceMemory<T>*>& sources,
              const std::vector<DecoderCache<T>*>& caches,
              const std::vector<TokenId>& tokens) const;

  struct AttnIds {
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct NormIds {
    std::size_t gain, bias;
  };
  struct FfnIds {
    std::size_t w1, b1, w2, b2;
  };
  struct EncLayerIds {
    NormIds ln_attn;
    AttnIds attn;
    NormIds ln_ffn;
    FfnIds ffn;
  };
  struct DecLayerIds {
    NormIds ln_self;
    AttnIds self;
    NormIds ln_cross;
    AttnIds cross;
    NormIds ln_ffn;
    FfnIds ffn;
  };

  /// Read-only view of one parameter tensor.
  ConstMatMap<T> param(std::size_t id) const;
  std::size_t token_embedding() const { return tok_embed_; }
  std::size_t lang_embedding() const { return lang_embed_; }
  const std::vector<EncLayerIds>& encoder_layers() const { return enc_; }
  const std::vector<DecLayerIds>& decoder_layers() const { return dec_; }
  NormIds encoder_norm() const { return enc_norm_; }
  NormIds decoder_norm() const { return dec_norm_; }
  const Mat<T>& position_table() const { return positions_; }

 private:
  Architecture arch_;
  ParamLayout layout_;
  ParamVector<T> params_;
  std::size_t tok_embed_ = 0, lang_embed_ = 0;
  std::vector<EncLayerIds> enc_;
  std::vector<DecLayerIds> dec_;
  NormIds enc_norm_{}, dec_norm_{};
  Mat<T> positions_;  // sinusoidal table
};

extern template class Transformer<float>;
extern template class Transformer<double>;

}  // namespace bitref::nn
