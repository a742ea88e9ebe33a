#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bitref/dataset.hpp"
#include "bitref/model/config.hpp"
#include "bitref/model/transformer.hpp"
#include "bitref/tokenize.hpp"

namespace bitref {

/// Encoder input: in_f SEP in_e. Positions restart at 0 on SEP; SEP carries
/// the tag of the segment it opens.
struct EncodedInput {
  TokenSeq ids;
  std::vector<std::int32_t> positions;
  std::vector<TokenId> lang_tags;  // kLangF or kLangE per token

  friend bool operator==(const EncodedInput&, const EncodedInput&) = default;
};

/// Throws SequenceTooLong when |in_f| + 1 + |in_e| exceeds max_len.
EncodedInput encode_input(const TokenSeq& in_f, const TokenSeq& in_e, std::size_t max_len);
EncodedInput encode_input(const TrainingExample& ex, std::size_t max_len);

nn::Architecture architecture_for(const ModelConfig& cfg, std::size_t vocab_size);

/// Packs examples into one batch. Identical (in_f, in_e, target) examples are
/// merged into a single sequence carrying the summed weight, so a weight-w
/// example and w literal copies produce the same batch.
nn::PackedBatch pack_examples(std::span<const TrainingExample> examples, std::size_t max_len);

template <class T>
struct LossAndGrads {
  nn::LossStats stats;
  nn::ParamVector<T> grads;  // flat, in parameter-layout order
};

/// Editor = config + codec + transformer. T is float for training and
/// double for gradient checks.
template <class T>
class BasicEditorModel {
 public:
  BasicEditorModel(ModelConfig config, SubwordCodec codec);

  const ModelConfig& config() const { return config_; }
  const SubwordCodec& codec() const { return codec_; }
  const nn::Transformer<T>& net() const { return net_; }
  nn::Transformer<T>& net() { return net_; }

  void init_params(std::uint64_t seed) { net_.init_params(seed); }

  /// Weighted token-mean label-smoothed NLL and its exact gradient, no dropout.
  LossAndGrads<T> loss_and_grads(std::span<const TrainingExample> batch,
                                 double label_smoothing) const;
  /// Loss only.
  nn::LossStats loss(std::span<const TrainingExample> batch, double label_smoothing) const;

  /// Throws NonFinite if any parameter is NaN or infinite.
  void check_finite() const;

 private:
  ModelConfig config_;
  SubwordCodec codec_;
  nn::Transformer<T> net_;
};

using EditorModel = BasicEditorModel<float>;
using EditorModel64 = BasicEditorModel<double>;

/// exp of the weighted token-mean unsmoothed NLL over all examples. Throws NonFinite.
template <class T>
double perplexity(const BasicEditorModel<T>& model, std::span<const TrainingExample> examples);

/// Groups examples into batches whose weighted token count stays within
/// `max_tokens` (an oversized example gets a batch of its own). Order is kept.
std::vector<std::vector<TrainingExample>> make_batches(std::span<const TrainingExample> examples,
                                                       std::size_t max_tokens);

/// Weighted token cost of an example inside a batch.
std::size_t example_tokens(const TrainingExample& ex);

extern template class BasicEditorModel<float>;
extern template class BasicEditorModel<double>;

}  // namespace bitref
