#pragma once

#include <stdexcept>
#include <string>

#include "poex/data.hpp"
#include "poex/model.hpp"

namespace poex {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int steps = 200;
  int batch = 8;
  double lr = 1e-3;
  double clip = 10.0;
  double kl_warmup_frac = 0.1;  // linear 0 -> 1 over this fraction of steps
  int kl_samples = 1;
  int checkpoint_every = 0;  // 0 = final checkpoint only
  std::uint64_t seed = 1;
};

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  MaskStrategy mask = BernoulliMask{0.5};
  std::string data;  // JSONL path, resolved against POEX_DATA_DIR when relative
};

// Strict parse: unknown keys are an error, as is a schema version mismatch.
ExperimentConfig parse_experiment_config(const std::string& json_text);
std::string model_config_to_json(const ModelConfig& m);
ModelConfig model_config_from_json(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);
std::string experiment_config_to_json(const ExperimentConfig& cfg);

}  // namespace poex
