#include "bitref/model/trainer.hpp"

#include <cmath>
#include <sstream>

#include "bitref/errors.hpp"
#include "bitref/random.hpp"
#include "bitref/text.hpp"

namespace bitref {

double learning_rate(const ModelConfig& cfg, std::size_t update) {
  if (cfg.warmup_updates == 0) return cfg.lr;
  const double w = static_cast<double>(cfg.warmup_updates);
  const double u = static_cast<double>(update);
  if (update < cfg.warmup_updates) return cfg.warmup_init_lr + (cfg.lr - cfg.warmup_init_lr) * u / w;
  return cfg.lr * std::sqrt(w / u);
}

std::string format_epoch_log(const EpochLog& log) {
  std::ostringstream s;
  s << "epoch=" << log.epoch << " updates=" << log.updates
    << " loss=" << text::format_real(log.train_loss) << " nll=" << text::format_real(log.train_nll)
    << " dev_ppl=" << text::format_real(log.dev_ppl) << " lr=" << text::format_real(log.lr);
  return s.str();
}

namespace {

class Adam {
 public:
  Adam(const ModelConfig& cfg, std::size_t n) : cfg_(cfg), m_(n, 0.0f), v_(n, 0.0f) {}

  void step(nn::ParamVector<float>& params, const nn::ParamVector<float>& grad, double lr) {
    ++t_;
    const double b1 = cfg_.adam_betas.first, b2 = cfg_.adam_betas.second;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    const float step_size = static_cast<float>(lr * std::sqrt(c2) / c1);
    const float decay = static_cast<float>(lr * cfg_.weight_decay);
    const float fb1 = static_cast<float>(b1), fb2 = static_cast<float>(b2);
    const float eps = static_cast<float>(cfg_.adam_eps * std::sqrt(c2));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const float g = grad[i];
      m_[i] = fb1 * m_[i] + (1.0f - fb1) * g;
      v_[i] = fb2 * v_[i] + (1.0f - fb2) * g * g;
      if (decay != 0.0f) params[i] -= decay * params[i];
      params[i] -= step_size * m_[i] / (std::sqrt(v_[i]) + eps);
    }
  }

 private:
  const ModelConfig& cfg_;
  std::vector<float> m_, v_;
  std::size_t t_ = 0;
};

void clip(nn::ParamVector<float>& grad, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (float g : grad) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const float scale = static_cast<float>(max_norm / (norm + 1e-6));
    for (float& g : grad) g *= scale;
  }
}

}  // namespace

TrainResult train(EditorModel model, const DatasetSplit& split, const TrainOptions& opts) {
  if (split.train.empty()) fail(Errc::InvalidArgument, "training set is empty");
  const ModelConfig& cfg = model.config();
  cfg.validate();

  auto& params = model.net().params();
  Adam adam(cfg, params.size());
  nn::ParamVector<float> grad(params.size());
  std::vector<TrainingExample> order = split.train;
  Rng shuffle_rng(derive_seed(cfg.seed, 0x7368756666ULL));

  TrainResult result{Checkpoint{model, 0, 0.0}, {}};
  double best = INFINITY;
  std::size_t updates = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0, nll_sum = 0.0, w_sum = 0.0;
    double lr = 0.0;
    for (const auto& batch : make_batches(order, cfg.max_tokens_per_batch)) {
      ++updates;
      lr = learning_rate(cfg, updates);
      std::fill(grad.begin(), grad.end(), 0.0f);
      nn::LossStats stats;
      try {
        stats = model.net().forward_backward(pack_examples(batch, cfg.max_len), cfg.label_smoothing,
                                             true, derive_seed(cfg.seed, updates), &grad);
      } catch (const Error& e) {
        if (e.code() != Errc::NonFiniteLoss) throw;
        fail(Errc::NonFiniteLoss, "training diverged at epoch " + std::to_string(epoch) +
                                      ", update " + std::to_string(updates) + ", lr " +
                                      text::format_real(lr));
      }
      clip(grad, cfg.clip_norm);
      adam.step(params, grad, lr);
      loss_sum += stats.loss * stats.weight_tokens;
      nll_sum += stats.nll * stats.weight_tokens;
      w_sum += stats.weight_tokens;
    }

    EpochLog log;
    log.epoch = epoch;
    log.updates = updates;
    log.train_loss = loss_sum / w_sum;
    log.train_nll = nll_sum / w_sum;
    log.lr = lr;
    double select = 0.0;
    if (!split.dev.empty()) {
      log.dev_ppl = perplexity(model, split.dev);
      select = log.dev_ppl;
    } else {
      select = std::exp(log.train_nll);
    }
    if (select < best) {
      best = select;
      result.best = Checkpoint{model, epoch, log.dev_ppl};
    }
    result.log.push_back(log);
    if (opts.on_epoch) opts.on_epoch(log);
    if (opts.stop_below_loss && log.train_loss < *opts.stop_below_loss) break;
  }
  return result;
}

}  // namespace bitref
