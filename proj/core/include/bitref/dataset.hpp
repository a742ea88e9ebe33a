#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "bitref/corpus.hpp"
#include "bitref/mine.hpp"
#include "bitref/tokenize.hpp"

namespace bitref {

enum class Task : std::uint8_t { Edit = 0, Mt = 1 };

std::string_view task_name(Task t);

/// One supervised instance: the editor reads (in_f SEP in_e) and predicts
/// `target`, whose first id is the language tag of the side it rewrites.
struct TrainingExample {
  TokenSeq in_f;
  TokenSeq in_e;
  TokenSeq target;
  Task task = Task::Edit;
  std::uint32_t weight = 1;
  std::size_t pair_index = 0;

  friend bool operator==(const TrainingExample&, const TrainingExample&) = default;
};

/// Throws InvalidArgument when mask placement, language tag or weight is wrong.
void validate_example(const TrainingExample& ex);

/// Reconstruction examples: for every x_e' (in_f = x_f, in_e = x_e', target = <e> x_e)
/// and every x_f' (in_f = x_f', in_e = x_e, target = <f> x_f).
std::vector<TrainingExample> build_edit_examples(std::size_t pair_index, const BitextPair& pair,
                                                 const PairCandidates& cands,
                                                 const SubwordCodec& codec);

/// Masked translation examples in both directions.
std::vector<TrainingExample> build_mt_examples(std::size_t pair_index, const BitextPair& pair,
                                               const SubwordCodec& codec);

/// Gives every MT example weight round(edit_count / |mt|), at least 1.
void upweight_mt(std::size_t edit_count, std::span<TrainingExample> mt_examples);

struct DatasetSplit {
  std::vector<TrainingExample> train;
  std::vector<TrainingExample> dev;

  friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

/// All examples of `dev_pairs` randomly chosen pair indices go to dev. Throws TooFewPairs.
DatasetSplit make_split(const std::vector<TrainingExample>& examples, std::size_t dev_pairs,
                        std::uint64_t seed);

struct DatasetOptions {
  std::size_t max_len = 128;
  std::size_t dev_pairs = 0;
  std::uint64_t seed = 1;
  /// Dev keeps only the masked-translation examples of its pairs.
  bool dev_clean_only = false;
  /// Skip reconstruction examples (translation-only model).
  bool mt_only = false;
};

struct BuiltDataset {
  DatasetSplit split;
  std::size_t edit_examples = 0;
  std::size_t mt_examples = 0;
  std::size_t dropped_too_long = 0;
};

/// Builds edit + MT examples for every pair in order, applies the length
/// filter and upweighting, then splits. `cands` may be empty when mt_only.
BuiltDataset build_dataset(const Corpus& corpus, const std::vector<PairCandidates>& cands,
                           const SubwordCodec& codec, const DatasetOptions& opts);

enum class DatasetFormat { Jsonl, Binary };

DatasetFormat parse_dataset_format(std::string_view name);
void save_dataset(const std::filesystem::path& path, const DatasetSplit& split, DatasetFormat format);
DatasetSplit load_dataset(const std::filesystem::path& path);

/// Sum of weights over examples of a task.
std::uint64_t weighted_count(const std::vector<TrainingExample>& examples, Task task);

}  // namespace bitref
