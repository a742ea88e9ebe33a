#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "bitref/corpus.hpp"
#include "bitref/model/config.hpp"

namespace bitref {

struct SyntheticSettings {
  std::size_t pool_a = 2000;
  std::size_t pool_b = 2000;
  std::size_t test = 200;
  std::size_t vocab_size = 400;
  std::size_t min_len = 4;
  std::size_t max_len = 10;
  double zipf = 1.0;

  friend bool operator==(const SyntheticSettings&, const SyntheticSettings&) = default;
};

/// Every pipeline setting. Text form is sectioned `key = value` lines:
///
///   seed = 7
///   [pools]
///   low = 1.05
///
/// Flags override file values, which override these defaults.
struct PipelineConfig {
  std::uint64_t seed = 1;
  std::string format = "tsv";
  std::filesystem::path work_dir = "work";

  double low = 1.05;
  double high = 1.06;

  std::size_t k = 4;
  std::size_t embed_dim = 256;
  bool lexicon_pivot = true;  // toy lexicon as embedding pivot
  std::size_t threads = 1;

  std::size_t merges = 200;

  std::size_t dev_pairs = 100;
  bool dev_clean_only = false;

  /// `model.preset = paper|desk` replaces every model field at that point.
  ModelConfig model;
  /// Epoch budget of the translation-only systems; 0 reuses model.max_epochs.
  std::size_t nmt_epochs = 0;

  NoiseSpec noise{0.1, 0.1, 0.1, 0.3, 0.4, 11};
  SyntheticSettings synthetic;

  std::size_t beam = 1;
  std::size_t decode_batch = 64;

  /// Throws ConfigError naming the offending key.
  void validate() const;
  /// `key` is "section.name" or a top-level name. Throws ConfigError.
  void set(std::string_view key, std::string_view value);
  /// Canonical text form; parse(to_text()) reproduces the config.
  std::string to_text() const;

  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

/// Applies the settings in `text` on top of `base`. Throws ConfigError.
PipelineConfig parse_pipeline_config(std::string_view text, PipelineConfig base = {});
PipelineConfig load_pipeline_config(const std::filesystem::path& path, PipelineConfig base = {});

/// The experiment's default settings tuned for desk runtime.
PipelineConfig experiment_defaults();

}  // namespace bitref
