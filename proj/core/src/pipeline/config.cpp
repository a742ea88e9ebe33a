#include "bitref/pipeline/config.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

#include "bitref/errors.hpp"
#include "bitref/text.hpp"

namespace bitref {

namespace {

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
  fail(Errc::ConfigError, std::string(key) + ": bad value '" + std::string(value) + "'");
}

double to_real(std::string_view key, std::string_view v) {
  double d;
  if (!text::parse_real(v, d)) bad_value(key, v);
  return d;
}

std::uint64_t to_uint(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  if (v.empty()) bad_value(key, v);
  for (char c : v) {
    if (c < '0' || c > '9') bad_value(key, v);
    out = out * 10 + static_cast<std::uint64_t>(c - '0');
  }
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v);
}

std::string unquote(std::string_view v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return std::string(v.substr(1, v.size() - 2));
  return std::string(v);
}

}  // namespace

void PipelineConfig::validate() const {
  auto bad = [](const std::string& key, const std::string& why) {
    fail(Errc::ConfigError, key + ": " + why);
  };
  if (format != "tsv" && format != "jsonl") bad("format", "expected tsv or jsonl");
  if (!(low < high)) bad("pools.low", "must be below pools.high");
  if (k == 0) bad("mine.k", "must be positive");
  if (embed_dim == 0) bad("mine.embed_dim", "must be positive");
  if (threads == 0) bad("mine.threads", "must be positive");
  if (beam == 0) bad("decode.beam", "must be positive");
  if (decode_batch == 0) bad("decode.batch", "must be positive");
  if (synthetic.vocab_size < 2) bad("synthetic.vocab_size", "must be >= 2");
  if (synthetic.min_len == 0 || synthetic.min_len > synthetic.max_len) {
    bad("synthetic.min_len", "need 1 <= min_len <= max_len");
  }
  if (!(synthetic.zipf >= 0.0)) bad("synthetic.zipf", "must be >= 0");
  try {
    noise.validate();
  } catch (const Error& e) {
    bad("noise", e.what());
  }
  model.validate();
}

void PipelineConfig::set(std::string_view key, std::string_view raw) {
  const std::string value = unquote(text::trim(raw));
  const std::string k_str(key);
  auto section_of = [&]() -> std::pair<std::string_view, std::string_view> {
    const auto dot = key.find('.');
    if (dot == std::string_view::npos) return {"", key};
    return {key.substr(0, dot), key.substr(dot + 1)};
  };
  const auto [section, name] = section_of();

  if (section.empty()) {
    if (name == "seed") seed = to_uint(key, value);
    else if (name == "format") format = value;
    else fail(Errc::ConfigError, k_str + ": unknown key");
  } else if (section == "paths") {
    if (name == "work_dir") work_dir = value;
    else fail(Errc::ConfigError, k_str + ": unknown key");
  } else if (section == "pools") {
    if (name == "low") low = to_real(key, value);
    else if (name == "high") high = to_real(key, value);
    else fail(Errc::ConfigError, k_str + ": unknown key");
  } else if (section == "mine") {
    if (name == "k") k = to_uint(key, value);
    else if (name == "embed_dim") embed_dim = to_uint(key, value);
    else if (name == "lexicon_pivot") lexicon_pivot = to_bool(key, value);
    else if (name == "threads") threads = to_uint(key, value);
    else fail(Errc::ConfigError, k_str + ": unknown key");
  } else if (section == "bpe") {
    if (name == "merges") merges = to_uint(key, value);
    else fail(Errc::ConfigError, k_str + ": unknown key");
  } else if (section == "data") {
    if (name == "dev_pairs") dev_pairs = to_uint(key, value);
    else if (name == "dev_clean_only") dev_clean_only = to_bool(key, value);
    else fail(Errc::ConfigError, k_str + ": unknown key");
  } else if (section == "model") {
    if (name == "preset") {
      if (value == "paper") model = paper_preset();
      else if (value == "desk") model = desk_preset();
      else bad_value(key, value);
    } else if (!model.set(name, value)) {
      fail(Errc::ConfigError, k_str + ": unknown key");
    }
  } else if (section == "nmt") {
    if (name == "epochs") nmt_epochs = to_uint(key, value);
    else fail(Errc::ConfigError, k_str + ": unknown key");
  } else if (section == "noise") {
    if (name == "p_drop") noise.p_drop = to_real(key, value);
    else if (name == "p_swap") noise.p_swap = to_real(key, value);
    else if (name == "p_replace") noise.p_replace = to_real(key, value);
    else if (name == "p_misalign") noise.p_misalign = to_real(key, value);
    else if (name == "pair_rate") noise.pair_rate = to_real(key, value);
    else if (name == "seed") noise.seed = to_uint(key, value);
    else fail(Errc::ConfigError, k_str + ": unknown key");
  } else if (section == "synthetic") {
    if (name == "pool_a") synthetic.pool_a = to_uint(key, value);
    else if (name == "pool_b") synthetic.pool_b = to_uint(key, value);
    else if (name == "test") synthetic.test = to_uint(key, value);
    else if (name == "vocab_size") synthetic.vocab_size = to_uint(key, value);
    else if (name == "min_len") synthetic.min_len = to_uint(key, value);
    else if (name == "max_len") synthetic.max_len = to_uint(key, value);
    else if (name == "zipf") synthetic.zipf = to_real(key, value);
    else fail(Errc::ConfigError, k_str + ": unknown key");
  } else if (section == "decode") {
    if (name == "beam") beam = to_uint(key, value);
    else if (name == "batch") decode_batch = to_uint(key, value);
    else fail(Errc::ConfigError, k_str + ": unknown key");
  } else {
    fail(Errc::ConfigError, k_str + ": unknown section");
  }
}

std::string PipelineConfig::to_text() const {
  std::ostringstream s;
  auto r = [](double v) { return text::format_real(v); };
  auto b = [](bool v) { return v ? "true" : "false"; };
  s << "seed = " << seed << "\nformat = " << format << "\n"
    << "\n[paths]\nwork_dir = \"" << work_dir.string() << "\"\n"
    << "\n[pools]\nlow = " << r(low) << "\nhigh = " << r(high) << "\n"
    << "\n[mine]\nk = " << k << "\nembed_dim = " << embed_dim
    << "\nlexicon_pivot = " << b(lexicon_pivot) << "\nthreads = " << threads << "\n"
    << "\n[bpe]\nmerges = " << merges << "\n"
    << "\n[data]\ndev_pairs = " << dev_pairs << "\ndev_clean_only = " << b(dev_clean_only) << "\n"
    << "\n[model]\ndim = " << model.dim << "\nffn_dim = " << model.ffn_dim
    << "\nheads = " << model.heads << "\nlayers = " << model.layers
    << "\ndropout = " << r(model.dropout) << "\nattn_dropout = " << r(model.attn_dropout)
    << "\nrelu_dropout = " << r(model.relu_dropout)
    << "\nlabel_smoothing = " << r(model.label_smoothing) << "\nlr = " << r(model.lr)
    << "\nwarmup_init_lr = " << r(model.warmup_init_lr)
    << "\nwarmup_updates = " << model.warmup_updates
    << "\nadam_beta1 = " << r(model.adam_betas.first)
    << "\nadam_beta2 = " << r(model.adam_betas.second) << "\nadam_eps = " << r(model.adam_eps)
    << "\nweight_decay = " << r(model.weight_decay) << "\nclip_norm = " << r(model.clip_norm)
    << "\nmax_tokens = " << model.max_tokens_per_batch << "\nmax_epochs = " << model.max_epochs
    << "\nmax_len = " << model.max_len << "\nseed = " << model.seed << "\n"
    << "\n[nmt]\nepochs = " << nmt_epochs << "\n"
    << "\n[noise]\np_drop = " << r(noise.p_drop) << "\np_swap = " << r(noise.p_swap)
    << "\np_replace = " << r(noise.p_replace) << "\np_misalign = " << r(noise.p_misalign)
    << "\npair_rate = " << r(noise.pair_rate) << "\nseed = " << noise.seed << "\n"
    << "\n[synthetic]\npool_a = " << synthetic.pool_a << "\npool_b = " << synthetic.pool_b
    << "\ntest = " << synthetic.test << "\nvocab_size = " << synthetic.vocab_size
    << "\nmin_len = " << synthetic.min_len << "\nmax_len = " << synthetic.max_len
    << "\nzipf = " << r(synthetic.zipf) << "\n"
    << "\n[decode]\nbeam = " << beam << "\nbatch = " << decode_batch << "\n";
  return s.str();
}

PipelineConfig parse_pipeline_config(std::string_view body, PipelineConfig cfg) {
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= body.size()) {
    const auto end = std::min(body.find('\n', pos), body.size());
    std::string_view line = body.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = text::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        fail(Errc::ConfigError, "line " + std::to_string(line_no) + ": unterminated section header");
      }
      section = std::string(text::trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      fail(Errc::ConfigError, "line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(text::trim(line.substr(0, eq)));
    cfg.set(section.empty() ? key : section + "." + key, line.substr(eq + 1));
  }
  return cfg;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path, PipelineConfig base) {
  std::ifstream f(path);
  if (!f) fail(Errc::ConfigError, "cannot read config " + path.string());
  const std::string body((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_pipeline_config(body, std::move(base));
}

PipelineConfig experiment_defaults() {
  PipelineConfig cfg;
  cfg.model.dim = 64;
  cfg.model.ffn_dim = 256;
  cfg.model.heads = 4;
  cfg.model.layers = 2;
  cfg.model.max_epochs = 20;
  cfg.model.max_tokens_per_batch = 2000;
  cfg.model.lr = 3e-3;
  cfg.model.warmup_updates = 200;
  cfg.model.max_len = 64;
  // short translation budget: noisy data costs more when updates are scarce
  cfg.nmt_epochs = 12;
  cfg.synthetic.vocab_size = 1000;
  cfg.noise.p_replace = 0.3;
  cfg.noise.p_misalign = 0.5;
  return cfg;
}

}  // namespace bitref
