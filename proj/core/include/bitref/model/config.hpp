#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>

namespace bitref {

struct ModelConfig {
  std::size_t dim = 64;
  std::size_t ffn_dim = 256;
  std::size_t heads = 4;
  std::size_t layers = 2;
  double dropout = 0.1;
  double attn_dropout = 0.0;
  double relu_dropout = 0.0;
  double label_smoothing = 0.2;
  double lr = 5e-4;
  double warmup_init_lr = 1e-7;
  std::size_t warmup_updates = 200;
  std::pair<double, double> adam_betas{0.9, 0.98};
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 0.0;  // 0 disables
  std::size_t max_tokens_per_batch = 2000;
  std::size_t max_epochs = 50;
  std::size_t max_len = 128;
  std::uint64_t seed = 1;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  /// Sets a field from its string form; returns false for an unknown key.
  bool set(std::string_view key, std::string_view value);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Desk-scale defaults.
ModelConfig desk_preset();
/// The full-size transformer setting (512/4096/8 heads/6 layers, dropout 0.4, ...).
ModelConfig paper_preset();

std::string to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(std::string_view json);

}  // namespace bitref
