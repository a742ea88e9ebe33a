#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "bitref/corpus.hpp"
#include "bitref/metrics.hpp"
#include "bitref/pipeline/config.hpp"

namespace bitref {

struct ExperimentRow {
  std::string system;
  std::size_t train_pairs = 0;
  double bleu = 0.0;
  double chrf = 0.0;
};

struct ExperimentResult {
  /// Pool A, Filtering, A∪B, A∪b(B), A∪r(B). Filtering drops pool B, so it
  /// is the Pool A system.
  std::vector<ExperimentRow> rows;
  /// Pool sizes, restoration rates, edit statistics, training summaries.
  Report details;

  std::size_t pool_a_size = 0;
  std::size_t refined_a_size = 0;
  double pool_a_unchanged_pct = 0.0;  // r(A) pairs textually identical to A
  double b_restored_pct = 0.0;        // corrupted B pairs equal to the clean pair after r(B)

  const ExperimentRow& row(std::string_view system) const;
};

using LogFn = std::function<void(std::string_view)>;

/// Synthetic end-to-end run: generate pools, score and split, learn BPE,
/// mine candidates from Pool A, train the editor, build r(B) and b(B), train
/// one translation system per training set and score it on a clean test set.
/// Artifacts go to `out_dir` when it is non-empty.
ExperimentResult run_experiment(const PipelineConfig& cfg, const std::filesystem::path& out_dir,
                                const LogFn& log = {});

/// Aligned text table of the comparison rows.
std::string format_experiment_table(const ExperimentResult& r);

}  // namespace bitref
