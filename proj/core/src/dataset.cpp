#include "bitref/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

#include "bitref/errors.hpp"
#include "bitref/random.hpp"
#include "bitref/text.hpp"

namespace bitref {

std::string_view task_name(Task t) { return t == Task::Edit ? "edit" : "mt"; }

namespace {

bool is_mask(const TokenSeq& s) { return s.size() == 1 && s[0] == special::kMask; }

TokenSeq with_lang(TokenId lang, const TokenSeq& body) {
  TokenSeq out;
  out.reserve(body.size() + 1);
  out.push_back(lang);
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

}  // namespace

void validate_example(const TrainingExample& ex) {
  if (ex.weight == 0) fail(Errc::InvalidArgument, "example weight must be positive");
  if (ex.in_f.empty() || ex.in_e.empty()) fail(Errc::InvalidArgument, "empty input segment");
  if (ex.target.empty() || !special::is_lang(ex.target[0])) {
    fail(Errc::InvalidArgument, "target must start with a language id");
  }
  const bool mask_f = is_mask(ex.in_f), mask_e = is_mask(ex.in_e);
  if (mask_f && mask_e) fail(Errc::InvalidArgument, "both inputs masked");
  if ((mask_f || mask_e) && ex.task != Task::Mt) {
    fail(Errc::InvalidArgument, "masked input on a non-MT example");
  }
  if (ex.task == Task::Mt) {
    if (!(mask_f || mask_e)) fail(Errc::InvalidArgument, "MT example without a masked side");
    // the masked side is the one being generated
    const TokenId expect = mask_f ? special::kLangF : special::kLangE;
    if (ex.target[0] != expect) fail(Errc::InvalidArgument, "MT target language mismatch");
  }
  for (std::size_t i = 1; i < ex.target.size(); ++i) {
    if (ex.target[i] < special::kCount && ex.target[i] != special::kMask) {
      fail(Errc::InvalidArgument, "special token inside target body");
    }
  }
}

std::vector<TrainingExample> build_edit_examples(std::size_t pair_index, const BitextPair& pair,
                                                 const PairCandidates& cands,
                                                 const SubwordCodec& codec) {
  const TokenSeq xf = codec.encode(pair.src.text);
  const TokenSeq xe = codec.encode(pair.tgt.text);
  std::vector<TrainingExample> out;
  out.reserve(cands.src.size() + cands.tgt.size());
  for (const auto& c : cands.tgt) {
    out.push_back({xf, codec.encode(c.sentence.text), with_lang(special::kLangE, xe), Task::Edit, 1,
                   pair_index});
  }
  for (const auto& c : cands.src) {
    out.push_back({codec.encode(c.sentence.text), xe, with_lang(special::kLangF, xf), Task::Edit, 1,
                   pair_index});
  }
  return out;
}

std::vector<TrainingExample> build_mt_examples(std::size_t pair_index, const BitextPair& pair,
                                               const SubwordCodec& codec) {
  const TokenSeq xf = codec.encode(pair.src.text);
  const TokenSeq xe = codec.encode(pair.tgt.text);
  const TokenSeq mask{special::kMask};
  return {
      {xf, mask, with_lang(special::kLangE, xe), Task::Mt, 1, pair_index},
      {mask, xe, with_lang(special::kLangF, xf), Task::Mt, 1, pair_index},
  };
}

namespace {
std::uint32_t mt_weight(std::size_t edit_count, std::size_t mt_count) {
  const double ratio = static_cast<double>(edit_count) / static_cast<double>(mt_count);
  return static_cast<std::uint32_t>(std::max(1.0, std::round(ratio)));
}
}  // namespace

void upweight_mt(std::size_t edit_count, std::span<TrainingExample> mt_examples) {
  if (mt_examples.empty()) fail(Errc::InvalidArgument, "no MT examples to upweight");
  const auto w = mt_weight(edit_count, mt_examples.size());
  for (auto& ex : mt_examples) ex.weight = w;
}

DatasetSplit make_split(const std::vector<TrainingExample>& examples, std::size_t dev_pairs,
                        std::uint64_t seed) {
  std::set<std::size_t> distinct;
  for (const auto& ex : examples) distinct.insert(ex.pair_index);
  if (dev_pairs > 0 && dev_pairs >= distinct.size()) {
    fail(Errc::TooFewPairs, "dev_pairs=" + std::to_string(dev_pairs) + " but only " +
                                std::to_string(distinct.size()) + " source pairs");
  }
  std::vector<std::size_t> ids(distinct.begin(), distinct.end());
  Rng rng(seed);
  rng.shuffle(ids);
  const std::set<std::size_t> dev_ids(ids.begin(), ids.begin() + static_cast<long>(dev_pairs));
  DatasetSplit split;
  for (const auto& ex : examples) {
    (dev_ids.count(ex.pair_index) ? split.dev : split.train).push_back(ex);
  }
  return split;
}

BuiltDataset build_dataset(const Corpus& corpus, const std::vector<PairCandidates>& cands,
                           const SubwordCodec& codec, const DatasetOptions& opts) {
  if (!opts.mt_only && cands.size() != corpus.size()) {
    fail(Errc::LengthMismatch, "candidate list does not match corpus size");
  }
  BuiltDataset built;
  std::vector<TrainingExample> examples;
  auto fits = [&](const TrainingExample& ex) {
    return ex.in_f.size() + 1 + ex.in_e.size() <= opts.max_len && ex.target.size() + 1 <= opts.max_len;
  };
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& pair = corpus.pairs[i];
    if (!opts.mt_only) {
      for (auto& ex : build_edit_examples(i, pair, cands[i], codec)) {
        if (fits(ex)) {
          examples.push_back(std::move(ex));
        } else {
          ++built.dropped_too_long;
        }
      }
    }
    for (auto& ex : build_mt_examples(i, pair, codec)) {
      if (fits(ex)) {
        examples.push_back(std::move(ex));
      } else {
        ++built.dropped_too_long;
      }
    }
  }
  for (const auto& ex : examples) {
    if (ex.task == Task::Edit) {
      ++built.edit_examples;
    } else {
      ++built.mt_examples;
    }
  }
  if (!opts.mt_only && built.mt_examples > 0) {
    const auto w = mt_weight(built.edit_examples, built.mt_examples);
    for (auto& ex : examples) {
      if (ex.task == Task::Mt) ex.weight = w;
    }
  }
  built.split = make_split(examples, opts.dev_pairs, opts.seed);
  if (opts.dev_clean_only) {
    std::erase_if(built.split.dev, [](const TrainingExample& ex) { return ex.task == Task::Edit; });
  }
  return built;
}

DatasetFormat parse_dataset_format(std::string_view name) {
  if (name == "jsonl") return DatasetFormat::Jsonl;
  if (name == "bin" || name == "binary") return DatasetFormat::Binary;
  fail(Errc::ConfigError, "unknown dataset format '" + std::string(name) + "'");
}

namespace {

constexpr char kDatasetMagic[4] = {'B', 'T', 'X', 'D'};
constexpr std::uint32_t kDatasetVersion = 1;

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) fail(Errc::ManifestMismatch, "truncated dataset file");
  return v;
}

void put_seq(std::ostream& out, const TokenSeq& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  for (auto id : s) put<std::int32_t>(out, id);
}

TokenSeq get_seq(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  TokenSeq s(n);
  for (auto& id : s) id = get<std::int32_t>(in);
  return s;
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const DatasetSplit& split, DatasetFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  if (format == DatasetFormat::Jsonl) {
    auto emit = [&](const TrainingExample& ex, std::string_view part) {
      nlohmann::ordered_json o;
      o["task"] = task_name(ex.task);
      o["in_f"] = ex.in_f;
      o["in_e"] = ex.in_e;
      o["tgt"] = ex.target;
      o["w"] = ex.weight;
      o["pair"] = ex.pair_index;
      o["split"] = part;
      out << o.dump() << '\n';
    };
    for (const auto& ex : split.train) emit(ex, "train");
    for (const auto& ex : split.dev) emit(ex, "dev");
  } else {
    out.write(kDatasetMagic, 4);
    put<std::uint32_t>(out, kDatasetVersion);
    put<std::uint64_t>(out, split.train.size());
    put<std::uint64_t>(out, split.dev.size());
    for (const auto* part : {&split.train, &split.dev}) {
      for (const auto& ex : *part) {
        put<std::uint8_t>(out, static_cast<std::uint8_t>(ex.task));
        put<std::uint32_t>(out, ex.weight);
        put<std::uint64_t>(out, ex.pair_index);
        put_seq(out, ex.in_f);
        put_seq(out, ex.in_e);
        put_seq(out, ex.target);
      }
    }
  }
  if (!out) fail(Errc::IoError, "write failed for " + path.string());
}

DatasetSplit load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::IoError, "cannot open " + path.string());
  DatasetSplit split;
  char magic[4] = {};
  in.read(magic, 4);
  if (in && std::memcmp(magic, kDatasetMagic, 4) == 0) {
    if (get<std::uint32_t>(in) != kDatasetVersion) fail(Errc::VersionMismatch, path.string());
    const auto n_train = get<std::uint64_t>(in);
    const auto n_dev = get<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < n_train + n_dev; ++i) {
      TrainingExample ex;
      const auto task = get<std::uint8_t>(in);
      if (task > 1) fail(Errc::MalformedRow, "bad task tag", i);
      ex.task = static_cast<Task>(task);
      ex.weight = get<std::uint32_t>(in);
      ex.pair_index = get<std::uint64_t>(in);
      ex.in_f = get_seq(in);
      ex.in_e = get_seq(in);
      ex.target = get_seq(in);
      (i < n_train ? split.train : split.dev).push_back(std::move(ex));
    }
    return split;
  }
  in.clear();
  in.seekg(0);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      const auto o = nlohmann::json::parse(line);
      TrainingExample ex;
      const auto task = o.at("task").get<std::string>();
      if (task != "edit" && task != "mt") fail(Errc::MalformedRow, "bad task", line_no);
      ex.task = task == "edit" ? Task::Edit : Task::Mt;
      ex.in_f = o.at("in_f").get<TokenSeq>();
      ex.in_e = o.at("in_e").get<TokenSeq>();
      ex.target = o.at("tgt").get<TokenSeq>();
      ex.weight = o.at("w").get<std::uint32_t>();
      ex.pair_index = o.value("pair", std::size_t{0});
      (o.value("split", std::string("train")) == "dev" ? split.dev : split.train)
          .push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::MalformedRow, e.what(), line_no);
    }
  }
  return split;
}

std::uint64_t weighted_count(const std::vector<TrainingExample>& examples, Task task) {
  std::uint64_t total = 0;
  for (const auto& ex : examples) {
    if (ex.task == task) total += ex.weight;
  }
  return total;
}

}  // namespace bitref
