#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bitref/dataset.hpp"
#include "bitref/model/checkpoint.hpp"
#include "bitref/model/editor.hpp"

namespace bitref {

/// Inverse square root schedule with linear warmup from warmup_init_lr.
double learning_rate(const ModelConfig& cfg, std::size_t update);

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t updates = 0;
  double train_loss = 0.0;  // weighted token mean, label smoothed
  double train_nll = 0.0;
  double dev_ppl = 0.0;     // 0 when dev is empty
  double lr = 0.0;

  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

std::string format_epoch_log(const EpochLog& log);

struct TrainOptions {
  /// Called after every epoch.
  std::function<void(const EpochLog&)> on_epoch;
  /// Stop once the training loss falls below this value (disabled when unset).
  std::optional<double> stop_below_loss;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochLog> log;
};

/// Adam on weighted-token batches, reshuffled each epoch from the config seed.
/// The returned checkpoint has the lowest dev perplexity (training perplexity
/// when dev is empty). Deterministic for a fixed seed. Throws NonFiniteLoss.
TrainResult train(EditorModel model, const DatasetSplit& split, const TrainOptions& opts = {});

}  // namespace bitref
