#include "bitref/model/config.hpp"

#include <json.hpp>

#include "bitref/errors.hpp"
#include "bitref/text.hpp"

namespace bitref {

void ModelConfig::validate() const {
  auto bad = [](const std::string& field, const std::string& why) {
    fail(Errc::ConfigError, "model." + field + ": " + why);
  };
  if (dim == 0 || heads == 0 || dim % heads != 0) bad("dim", "must be a positive multiple of heads");
  if (dim % 2 != 0) bad("dim", "must be even");
  if (ffn_dim == 0) bad("ffn_dim", "must be positive");
  if (layers == 0) bad("layers", "must be positive");
  for (auto [name, v] : {std::pair{"dropout", dropout}, std::pair{"attn_dropout", attn_dropout},
                         std::pair{"relu_dropout", relu_dropout}}) {
    if (!(v >= 0.0 && v < 1.0)) bad(name, "must lie in [0,1)");
  }
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) bad("label_smoothing", "must lie in [0,1)");
  if (!(lr > 0.0)) bad("lr", "must be positive");
  if (!(adam_betas.first >= 0.0 && adam_betas.first < 1.0)) bad("adam_beta1", "must lie in [0,1)");
  if (!(adam_betas.second >= 0.0 && adam_betas.second < 1.0)) bad("adam_beta2", "must lie in [0,1)");
  if (!(clip_norm >= 0.0)) bad("clip_norm", "must be >= 0");
  if (!(weight_decay >= 0.0)) bad("weight_decay", "must be >= 0");
  if (max_tokens_per_batch == 0) bad("max_tokens", "must be positive");
  if (max_len < 4) bad("max_len", "must be >= 4");
}

namespace {

template <class T>
bool parse_into(std::string_view v, T& out) {
  if constexpr (std::is_same_v<T, double>) {
    return text::parse_real(v, out);
  } else {
    double d;
    if (!text::parse_real(v, d) || d < 0 || d != static_cast<double>(static_cast<T>(d))) return false;
    out = static_cast<T>(d);
    return true;
  }
}

}  // namespace

bool ModelConfig::set(std::string_view key, std::string_view value) {
  bool ok = true;
  if (key == "dim") ok = parse_into(value, dim);
  else if (key == "ffn_dim") ok = parse_into(value, ffn_dim);
  else if (key == "heads") ok = parse_into(value, heads);
  else if (key == "layers") ok = parse_into(value, layers);
  else if (key == "dropout") ok = parse_into(value, dropout);
  else if (key == "attn_dropout") ok = parse_into(value, attn_dropout);
  else if (key == "relu_dropout") ok = parse_into(value, relu_dropout);
  else if (key == "label_smoothing") ok = parse_into(value, label_smoothing);
  else if (key == "lr") ok = parse_into(value, lr);
  else if (key == "warmup_init_lr") ok = parse_into(value, warmup_init_lr);
  else if (key == "warmup_updates") ok = parse_into(value, warmup_updates);
  else if (key == "adam_beta1") ok = parse_into(value, adam_betas.first);
  else if (key == "adam_beta2") ok = parse_into(value, adam_betas.second);
  else if (key == "adam_eps") ok = parse_into(value, adam_eps);
  else if (key == "weight_decay") ok = parse_into(value, weight_decay);
  else if (key == "clip_norm") ok = parse_into(value, clip_norm);
  else if (key == "max_tokens") ok = parse_into(value, max_tokens_per_batch);
  else if (key == "max_epochs") ok = parse_into(value, max_epochs);
  else if (key == "max_len") ok = parse_into(value, max_len);
  else if (key == "seed") ok = parse_into(value, seed);
  else return false;
  if (!ok) fail(Errc::ConfigError, "model." + std::string(key) + ": bad value '" + std::string(value) + "'");
  return true;
}

ModelConfig desk_preset() { return ModelConfig{}; }

ModelConfig paper_preset() {
  ModelConfig c;
  c.dim = 512;
  c.ffn_dim = 4096;
  c.heads = 8;
  c.layers = 6;
  c.dropout = 0.4;
  c.attn_dropout = 0.2;
  c.relu_dropout = 0.2;
  c.label_smoothing = 0.2;
  c.lr = 1e-3;
  c.warmup_init_lr = 1e-7;
  c.warmup_updates = 4000;
  c.adam_betas = {0.9, 0.98};
  c.weight_decay = 1e-4;
  c.clip_norm = 0.0;
  c.max_tokens_per_batch = 4000;
  c.max_epochs = 100;
  return c;
}

std::string to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["dim"] = c.dim;
  j["ffn_dim"] = c.ffn_dim;
  j["heads"] = c.heads;
  j["layers"] = c.layers;
  j["dropout"] = c.dropout;
  j["attn_dropout"] = c.attn_dropout;
  j["relu_dropout"] = c.relu_dropout;
  j["label_smoothing"] = c.label_smoothing;
  j["lr"] = c.lr;
  j["warmup_init_lr"] = c.warmup_init_lr;
  j["warmup_updates"] = c.warmup_updates;
  j["adam_betas"] = {c.adam_betas.first, c.adam_betas.second};
  j["adam_eps"] = c.adam_eps;
  j["weight_decay"] = c.weight_decay;
  j["clip_norm"] = c.clip_norm;
  j["max_tokens"] = c.max_tokens_per_batch;
  j["max_epochs"] = c.max_epochs;
  j["max_len"] = c.max_len;
  j["seed"] = c.seed;
  return j.dump();
}

ModelConfig model_config_from_json(std::string_view json) {
  try {
    const auto j = nlohmann::json::parse(json);
    ModelConfig c;
    c.dim = j.at("dim");
    c.ffn_dim = j.at("ffn_dim");
    c.heads = j.at("heads");
    c.layers = j.at("layers");
    c.dropout = j.at("dropout");
    c.attn_dropout = j.at("attn_dropout");
    c.relu_dropout = j.at("relu_dropout");
    c.label_smoothing = j.at("label_smoothing");
    c.lr = j.at("lr");
    c.warmup_init_lr = j.at("warmup_init_lr");
    c.warmup_updates = j.at("warmup_updates");
    c.adam_betas = {j.at("adam_betas").at(0), j.at("adam_betas").at(1)};
    c.adam_eps = j.at("adam_eps");
    c.weight_decay = j.at("weight_decay");
    c.clip_norm = j.at("clip_norm");
    c.max_tokens_per_batch = j.at("max_tokens");
    c.max_epochs = j.at("max_epochs");
    c.max_len = j.at("max_len");
    c.seed = j.at("seed");
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::ManifestMismatch, std::string("model config: ") + e.what());
  }
}

}  // namespace bitref
