#include "poex/config.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

namespace poex {
namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& where, std::set<std::string> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError(where + ": unknown key \"" + it.key() + "\"");
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

MaskStrategy parse_mask(const json& j) {
  check_keys(j, "mask", {"type", "p_obs", "h", "w", "n_obs", "n_ctx", "max_obs"});
  std::string type = j.at("type").get<std::string>();
  if (type == "bernoulli") {
    BernoulliMask m{0.5};
    maybe(j, "p_obs", m.p_obs);
    return m;
  }
  if (type == "square") {
    SquareMask m{4, 4};
    maybe(j, "h", m.h);
    maybe(j, "w", m.w);
    return m;
  }
  if (type == "expansion") {
    ExpansionSplit m{1};
    maybe(j, "n_obs", m.n_obs);
    return m;
  }
  if (type == "context_target") {
    ContextTarget m{1};
    maybe(j, "n_ctx", m.n_ctx);
    return m;
  }
  if (type == "function_subset") {
    FunctionSubset m{10};
    maybe(j, "max_obs", m.max_obs);
    return m;
  }
  throw ConfigError("mask: unknown type \"" + type + "\"");
}

json mask_to_json(const MaskStrategy& m) {
  json j;
  if (auto* b = std::get_if<BernoulliMask>(&m)) {
    j["type"] = "bernoulli";
    j["p_obs"] = b->p_obs;
  } else if (auto* s = std::get_if<SquareMask>(&m)) {
    j["type"] = "square";
    j["h"] = s->h;
    j["w"] = s->w;
  } else if (auto* e = std::get_if<ExpansionSplit>(&m)) {
    j["type"] = "expansion";
    j["n_obs"] = e->n_obs;
  } else if (auto* c = std::get_if<ContextTarget>(&m)) {
    j["type"] = "context_target";
    j["n_ctx"] = c->n_ctx;
  } else if (auto* f = std::get_if<FunctionSubset>(&m)) {
    j["type"] = "function_subset";
    j["max_obs"] = f->max_obs;
  }
  return j;
}

ModelConfig parse_model(const json& j) {
  check_keys(j, "model",
             {"task", "decoder", "d", "grid", "t_dim", "t_embed_dim", "embed_dim", "latent_dim",
              "heads", "blocks", "hidden", "conv_channels", "zeta_channels", "flow_blocks",
              "coupling_blocks", "idp", "seed"});
  ModelConfig m;
  if (j.contains("task")) m.task = task_from_string(j.at("task").get<std::string>());
  if (j.contains("decoder")) m.decoder = decoder_from_string(j.at("decoder").get<std::string>());
  maybe(j, "d", m.d);
  if (j.contains("grid")) {
    auto g = j.at("grid");
    if (!g.is_null()) {
      if (!g.is_array() || g.size() != 3) throw ConfigError("model.grid: expected [H, W, C]");
      m.grid = std::array<int, 3>{g[0].get<int>(), g[1].get<int>(), g[2].get<int>()};
    }
  }
  maybe(j, "t_dim", m.t_dim);
  maybe(j, "t_embed_dim", m.t_embed_dim);
  maybe(j, "embed_dim", m.nets.embed_dim);
  maybe(j, "latent_dim", m.nets.latent_dim);
  maybe(j, "heads", m.nets.heads);
  maybe(j, "blocks", m.nets.blocks);
  maybe(j, "hidden", m.nets.hidden);
  maybe(j, "conv_channels", m.nets.conv_channels);
  maybe(j, "zeta_channels", m.nets.zeta_channels);
  maybe(j, "flow_blocks", m.flow_blocks);
  maybe(j, "coupling_blocks", m.coupling_blocks);
  maybe(j, "idp", m.idp);
  maybe(j, "seed", m.seed);
  return m;
}

json model_to_json(const ModelConfig& m) {
  json j;
  j["task"] = to_string(m.task);
  j["decoder"] = to_string(m.decoder);
  j["d"] = m.d;
  if (m.grid)
    j["grid"] = {(*m.grid)[0], (*m.grid)[1], (*m.grid)[2]};
  else
    j["grid"] = nullptr;
  j["t_dim"] = m.t_dim;
  j["t_embed_dim"] = m.t_embed_dim;
  j["embed_dim"] = m.nets.embed_dim;
  j["latent_dim"] = m.nets.latent_dim;
  j["heads"] = m.nets.heads;
  j["blocks"] = m.nets.blocks;
  j["hidden"] = m.nets.hidden;
  j["conv_channels"] = m.nets.conv_channels;
  j["zeta_channels"] = m.nets.zeta_channels;
  j["flow_blocks"] = m.flow_blocks;
  j["coupling_blocks"] = m.coupling_blocks;
  j["idp"] = m.idp;
  j["seed"] = m.seed;
  return j;
}

TrainConfig parse_train(const json& j) {
  check_keys(j, "train",
             {"steps", "batch", "lr", "clip", "kl_warmup_frac", "kl_samples", "checkpoint_every",
              "seed"});
  TrainConfig t;
  maybe(j, "steps", t.steps);
  maybe(j, "batch", t.batch);
  maybe(j, "lr", t.lr);
  maybe(j, "clip", t.clip);
  maybe(j, "kl_warmup_frac", t.kl_warmup_frac);
  maybe(j, "kl_samples", t.kl_samples);
  maybe(j, "checkpoint_every", t.checkpoint_every);
  maybe(j, "seed", t.seed);
  if (t.steps < 1 || t.batch < 1 || t.lr <= 0 || t.kl_samples < 1)
    throw ConfigError("train: steps, batch and kl_samples must be positive, lr > 0");
  return t;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& m) { return model_to_json(m).dump(); }

ModelConfig model_config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  return parse_model(j);
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "config", {"version", "model", "train", "mask", "data"});
  if (!j.contains("version")) throw ConfigError("config is missing \"version\"");
  int version = j.value("version", 1);
  if (version != 1) throw ConfigError("unsupported config version " + std::to_string(version));

  ExperimentConfig cfg;
  try {
    if (j.contains("model")) cfg.model = parse_model(j.at("model"));
    if (j.contains("train")) cfg.train = parse_train(j.at("train"));
    if (j.contains("mask")) cfg.mask = parse_mask(j.at("mask"));
    maybe(j, "data", cfg.data);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config type error: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config value error: ") + e.what());
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_experiment_config(text);
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["version"] = 1;
  j["model"] = model_to_json(cfg.model);
  json t;
  t["steps"] = cfg.train.steps;
  t["batch"] = cfg.train.batch;
  t["lr"] = cfg.train.lr;
  t["clip"] = cfg.train.clip;
  t["kl_warmup_frac"] = cfg.train.kl_warmup_frac;
  t["kl_samples"] = cfg.train.kl_samples;
  t["checkpoint_every"] = cfg.train.checkpoint_every;
  t["seed"] = cfg.train.seed;
  j["train"] = t;
  j["mask"] = mask_to_json(cfg.mask);
  j["data"] = cfg.data;
  return j.dump(2);
}

}  // namespace poex
