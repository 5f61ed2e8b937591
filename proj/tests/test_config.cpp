#include "doctest.h"
#include "poex/config.hpp"

using namespace poex;

namespace {

const char* kFull = R"({
  "version": 1,
  "data": "train.jsonl",
  "model": {
    "task": "set_image",
    "decoder": "coupling",
    "d": 64,
    "grid": [8, 8, 1],
    "embed_dim": 32,
    "latent_dim": 4,
    "heads": 4,
    "blocks": 2,
    "hidden": 32,
    "conv_channels": 8,
    "zeta_channels": 4,
    "flow_blocks": 2,
    "coupling_blocks": 3,
    "idp": false,
    "seed": 11
  },
  "train": {
    "steps": 50,
    "batch": 4,
    "lr": 0.002,
    "clip": 5.0,
    "kl_warmup_frac": 0.2,
    "kl_samples": 2,
    "checkpoint_every": 10,
    "seed": 21
  },
  "mask": {"type": "square", "h": 4, "w": 4}
})";

}  // namespace

TEST_CASE("config: full document parses into every field") {
  ExperimentConfig cfg = parse_experiment_config(kFull);
  CHECK(cfg.data == "train.jsonl");
  CHECK(cfg.model.task == TaskKind::set_image);
  CHECK(cfg.model.decoder == DecoderKind::coupling);
  CHECK(cfg.model.d == 64);
  REQUIRE(cfg.model.grid.has_value());
  CHECK((*cfg.model.grid)[0] == 8);
  CHECK(cfg.model.nets.embed_dim == 32);
  CHECK(cfg.model.nets.latent_dim == 4);
  CHECK(cfg.model.flow_blocks == 2);
  CHECK(cfg.model.coupling_blocks == 3);
  CHECK(cfg.model.seed == 11);
  CHECK(cfg.train.steps == 50);
  CHECK(cfg.train.batch == 4);
  CHECK(cfg.train.lr == doctest::Approx(0.002));
  CHECK(cfg.train.kl_samples == 2);
  CHECK(cfg.train.checkpoint_every == 10);
  CHECK(cfg.train.seed == 21);
  REQUIRE(std::holds_alternative<SquareMask>(cfg.mask));
  CHECK(std::get<SquareMask>(cfg.mask).h == 4);
}

TEST_CASE("config: unknown keys are rejected at every level") {
  CHECK_THROWS_AS((void)parse_experiment_config(
                      R"({"version":1,"model":{"d":2},"bogus":true})"),
                  ConfigError);
  CHECK_THROWS_AS((void)parse_experiment_config(
                      R"({"version":1,"model":{"d":2,"bogus":1}})"),
                  ConfigError);
  CHECK_THROWS_AS((void)parse_experiment_config(
                      R"({"version":1,"model":{"d":2},"train":{"bogus":1}})"),
                  ConfigError);
  CHECK_THROWS_AS(
      (void)parse_experiment_config(
          R"({"version":1,"model":{"d":2},"mask":{"type":"bernoulli","p_obs":0.5,"bogus":1}})"),
      ConfigError);
}

TEST_CASE("config: version gate and malformed documents") {
  CHECK_THROWS_AS((void)parse_experiment_config(R"({"version":2,"model":{"d":2}})"),
                  ConfigError);
  CHECK_THROWS_AS((void)parse_experiment_config(R"({"model":{"d":2}})"),
                  ConfigError);
  CHECK_THROWS_AS((void)parse_experiment_config("not json at all"), ConfigError);
  CHECK_THROWS_AS((void)parse_experiment_config(
                      R"({"version":1,"model":{"task":"nope","d":2}})"),
                  ConfigError);
}

TEST_CASE("config: defaults survive a minimal document") {
  ExperimentConfig cfg =
      parse_experiment_config(R"({"version":1,"model":{"d":3}})");
  CHECK(cfg.model.task == TaskKind::set);
  CHECK(cfg.model.d == 3);
  CHECK(cfg.train.steps == 200);
  CHECK(std::holds_alternative<BernoulliMask>(cfg.mask));
}

TEST_CASE("config: round trips through json") {
  ExperimentConfig cfg = parse_experiment_config(kFull);
  ExperimentConfig back = parse_experiment_config(experiment_config_to_json(cfg));
  CHECK(back.model.task == cfg.model.task);
  CHECK(back.model.d == cfg.model.d);
  CHECK(back.model.seed == cfg.model.seed);
  CHECK(back.train.steps == cfg.train.steps);
  CHECK(back.train.lr == cfg.train.lr);
  CHECK(back.data == cfg.data);
  REQUIRE(std::holds_alternative<SquareMask>(back.mask));
  CHECK(std::get<SquareMask>(back.mask).w == 4);

  ModelConfig m = model_config_from_json(model_config_to_json(cfg.model));
  CHECK(m.task == cfg.model.task);
  CHECK(m.decoder == cfg.model.decoder);
  CHECK(m.d == cfg.model.d);
  CHECK(m.nets.latent_dim == cfg.model.nets.latent_dim);
  REQUIRE(m.grid.has_value());
  CHECK(*m.grid == *cfg.model.grid);
}
