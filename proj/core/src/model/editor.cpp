#include "bitref/model/editor.hpp"

#include <cmath>
#include <map>
#include <tuple>

#include "bitref/errors.hpp"

namespace bitref {

EncodedInput encode_input(const TokenSeq& in_f, const TokenSeq& in_e, std::size_t max_len) {
  const std::size_t n = in_f.size() + 1 + in_e.size();
  if (n > max_len) {
    fail(Errc::SequenceTooLong,
         "input of " + std::to_string(n) + " tokens exceeds max_len " + std::to_string(max_len));
  }
  EncodedInput out;
  out.ids.reserve(n);
  out.positions.reserve(n);
  out.lang_tags.reserve(n);
  for (std::size_t i = 0; i < in_f.size(); ++i) {
    out.ids.push_back(in_f[i]);
    out.positions.push_back(static_cast<std::int32_t>(i));
    out.lang_tags.push_back(special::kLangF);
  }
  out.ids.push_back(special::kSep);
  out.positions.push_back(0);
  out.lang_tags.push_back(special::kLangE);
  for (std::size_t i = 0; i < in_e.size(); ++i) {
    out.ids.push_back(in_e[i]);
    out.positions.push_back(static_cast<std::int32_t>(i + 1));
    out.lang_tags.push_back(special::kLangE);
  }
  return out;
}

EncodedInput encode_input(const TrainingExample& ex, std::size_t max_len) {
  return encode_input(ex.in_f, ex.in_e, max_len);
}

nn::Architecture architecture_for(const ModelConfig& cfg, std::size_t vocab_size) {
  nn::Architecture a;
  a.vocab = vocab_size;
  a.dim = cfg.dim;
  a.ffn_dim = cfg.ffn_dim;
  a.heads = cfg.heads;
  a.enc_layers = cfg.layers;
  a.dec_layers = cfg.layers;
  a.dropout = cfg.dropout;
  a.attn_dropout = cfg.attn_dropout;
  a.relu_dropout = cfg.relu_dropout;
  a.max_positions = cfg.max_len + 2;
  return a;
}

namespace {

void add_encoded(nn::PackedBatch& batch, const EncodedInput& in) {
  std::vector<std::uint8_t> lang(in.lang_tags.size());
  for (std::size_t i = 0; i < lang.size(); ++i) lang[i] = in.lang_tags[i] == special::kLangE ? 1 : 0;
  batch.add_source(in.ids, in.positions, lang);
}

}  // namespace

nn::PackedBatch pack_examples(std::span<const TrainingExample> examples, std::size_t max_len) {
  using Key = std::tuple<const TokenSeq*, const TokenSeq*, const TokenSeq*>;
  struct KeyLess {
    bool operator()(const Key& a, const Key& b) const {
      auto deref = [](const Key& k) {
        return std::tie(*std::get<0>(k), *std::get<1>(k), *std::get<2>(k));
      };
      return deref(a) < deref(b);
    }
  };
  std::map<Key, std::size_t, KeyLess> slot;
  std::vector<const TrainingExample*> unique;
  std::vector<double> weight;
  for (const auto& ex : examples) {
    auto [it, inserted] = slot.try_emplace(Key{&ex.in_f, &ex.in_e, &ex.target}, unique.size());
    if (inserted) {
      unique.push_back(&ex);
      weight.push_back(0.0);
    }
    weight[it->second] += static_cast<double>(ex.weight);
  }
  nn::PackedBatch batch;
  for (std::size_t i = 0; i < unique.size(); ++i) {
    const auto& ex = *unique[i];
    if (ex.target.size() + 1 > max_len) {
      fail(Errc::SequenceTooLong, "target of " + std::to_string(ex.target.size()) +
                                      " tokens exceeds max_len " + std::to_string(max_len));
    }
    add_encoded(batch, encode_input(ex, max_len));
    batch.add_target(ex.target, weight[i]);
  }
  return batch;
}

template <class T>
BasicEditorModel<T>::BasicEditorModel(ModelConfig config, SubwordCodec codec)
    : config_(std::move(config)),
      codec_(std::move(codec)),
      net_(architecture_for(config_, codec_.vocab().size())) {
  config_.validate();
}

template <class T>
LossAndGrads<T> BasicEditorModel<T>::loss_and_grads(std::span<const TrainingExample> batch,
                                                    double label_smoothing) const {
  if (batch.empty()) fail(Errc::InvalidArgument, "empty batch");
  LossAndGrads<T> out;
  out.grads.assign(net_.layout().total(), T(0));
  out.stats = net_.forward_backward(pack_examples(batch, config_.max_len), label_smoothing, false,
                                    0, &out.grads);
  return out;
}

template <class T>
nn::LossStats BasicEditorModel<T>::loss(std::span<const TrainingExample> batch,
                                        double label_smoothing) const {
  if (batch.empty()) fail(Errc::InvalidArgument, "empty batch");
  return net_.forward_backward(pack_examples(batch, config_.max_len), label_smoothing, false, 0,
                               nullptr);
}

template <class T>
void BasicEditorModel<T>::check_finite() const {
  const auto& p = net_.params();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!std::isfinite(static_cast<double>(p[i]))) {
      fail(Errc::NonFinite, "non-finite parameter", i);
    }
  }
}

std::size_t example_tokens(const TrainingExample& ex) {
  const std::size_t per_copy = ex.in_f.size() + 1 + ex.in_e.size() + ex.target.size() + 1;
  return per_copy * ex.weight;
}

std::vector<std::vector<TrainingExample>> make_batches(std::span<const TrainingExample> examples,
                                                       std::size_t max_tokens) {
  std::vector<std::vector<TrainingExample>> batches;
  std::size_t used = 0;
  for (const auto& ex : examples) {
    const std::size_t cost = example_tokens(ex);
    if (batches.empty() || used + cost > max_tokens) {
      if (batches.empty() || !batches.back().empty()) batches.emplace_back();
      used = 0;
    }
    batches.back().push_back(ex);
    used += cost;
  }
  return batches;
}

template <class T>
double perplexity(const BasicEditorModel<T>& model, std::span<const TrainingExample> examples) {
  if (examples.empty()) fail(Errc::InvalidArgument, "perplexity of an empty example set");
  double nll_sum = 0.0, w_sum = 0.0;
  for (const auto& batch : make_batches(examples, model.config().max_tokens_per_batch)) {
    const auto stats = model.loss(batch, 0.0);
    nll_sum += stats.nll * stats.weight_tokens;
    w_sum += stats.weight_tokens;
  }
  const double ppl = std::exp(nll_sum / w_sum);
  if (!std::isfinite(ppl)) fail(Errc::NonFinite, "perplexity is not finite");
  return ppl;
}

template class BasicEditorModel<float>;
template class BasicEditorModel<double>;
template double perplexity(const BasicEditorModel<float>&, std::span<const TrainingExample>);
template double perplexity(const BasicEditorModel<double>&, std::span<const TrainingExample>);

}  // namespace bitref
