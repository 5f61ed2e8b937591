#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "poex/train.hpp"

using namespace poex;
namespace fs = std::filesystem;

namespace {

std::vector<AnySet> toy_dataset(int n_sets, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<AnySet> out;
  for (int k = 0; k < n_sets; ++k) {
    MaskedSet s;
    s.d = 2;
    for (int i = 0; i < 6; ++i) {
      MaskedElement e;
      // a tight cluster the model can actually learn in a few dozen steps
      e.values = Eigen::VectorXd(2);
      e.values << 0.5 + 0.05 * rand_normal(rng), -0.5 + 0.05 * rand_normal(rng);
      e.mask.obs = Eigen::VectorXi::Ones(2);
      e.mask.query = Eigen::VectorXi::Zero(2);
      s.elements.push_back(std::move(e));
    }
    out.emplace_back(std::move(s));
  }
  return out;
}

ModelConfig toy_model(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.task = TaskKind::set;
  cfg.decoder = DecoderKind::gaussian;
  cfg.d = 2;
  cfg.nets.embed_dim = 8;
  cfg.nets.latent_dim = 2;
  cfg.nets.heads = 2;
  cfg.nets.blocks = 1;
  cfg.nets.hidden = 8;
  cfg.flow_blocks = 1;
  cfg.coupling_blocks = 2;
  cfg.seed = seed;
  return cfg;
}

TrainConfig quick_train(int steps, std::uint64_t seed) {
  TrainConfig t;
  t.steps = steps;
  t.batch = 4;
  t.lr = 5e-3;
  t.kl_samples = 1;
  t.seed = seed;
  return t;
}

std::string fresh_dir(const char* name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

}  // namespace

TEST_CASE("train: elbo improves and artifacts land on disk") {
  PoexModel m(toy_model(1));
  auto data = toy_dataset(16, 2);
  std::string dir = fresh_dir("poex_train_basic");
  TrainResult res = train_model(m, data, quick_train(60, 3), BernoulliMask{0.5}, dir);

  REQUIRE(res.metrics.size() == 60);
  CHECK(m.trained);
  double early = 0, late = 0;
  for (int i = 0; i < 10; ++i) {
    early += res.metrics[i].elbo;
    late += res.metrics[50 + i].elbo;
  }
  CHECK(late > early);
  CHECK(fs::exists(res.checkpoint_path));
  CHECK(fs::exists(dir + "/metrics.csv"));

  // csv shape: header plus one row per step, four comma-separated fields
  std::ifstream in(dir + "/metrics.csv");
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "step,elbo,recon,kl");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 3);
  }
  CHECK(rows == 60);
  fs::remove_all(dir);
}

TEST_CASE("train: model checkpoints round trip exactly") {
  PoexModel m(toy_model(4));
  auto data = toy_dataset(8, 5);
  std::string dir = fresh_dir("poex_train_ckpt");
  train_model(m, data, quick_train(10, 6), BernoulliMask{0.5}, dir);

  LoadedModel back = load_model(dir + "/final.zip");
  REQUIRE(back.model);
  CHECK(back.step == 10);
  CHECK(back.model->trained);
  CHECK(back.model->config().d == 2);
  CHECK(back.model->config().seed == 4);

  // loaded model must score sets identically to a re-save of itself
  std::string p1 = dir + "/resave1.zip";
  std::string p2 = dir + "/resave2.zip";
  save_model(p1, *back.model, back.step);
  save_model(p2, *back.model, back.step);
  std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), {});
  std::string sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
  fs::remove_all(dir);
}

TEST_CASE("train: identical runs are byte identical, resume has no step gap") {
  auto data = toy_dataset(8, 7);
  std::string d1 = fresh_dir("poex_train_r1");
  std::string d2 = fresh_dir("poex_train_r2");

  PoexModel m1(toy_model(9));
  PoexModel m2(toy_model(9));
  TrainConfig t = quick_train(12, 10);
  t.checkpoint_every = 6;
  TrainResult r1 = train_model(m1, data, t, BernoulliMask{0.5}, d1);
  TrainResult r2 = train_model(m2, data, t, BernoulliMask{0.5}, d2);

  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(slurp(d1 + "/final.zip") == slurp(d2 + "/final.zip"));
  CHECK(slurp(d1 + "/metrics.csv") == slurp(d2 + "/metrics.csv"));
  for (size_t i = 0; i < r1.metrics.size(); ++i)
    CHECK(r1.metrics[i].elbo == r2.metrics[i].elbo);

  // resume from the mid checkpoint: steps continue at 6..11
  LoadedModel mid = load_model(d1 + "/step-000006.zip");
  REQUIRE(mid.model);
  CHECK(mid.step == 6);
  std::string d3 = fresh_dir("poex_train_r3");
  TrainResult r3 = train_model(*mid.model, data, t, BernoulliMask{0.5}, d3, mid.step);
  REQUIRE(r3.metrics.size() == 6);
  CHECK(r3.metrics.front().step == 6);
  CHECK(r3.metrics.back().step == 11);
  // same per-step mask/sample seeds: resumed elbos track the original run
  // closely (f32 checkpoint rounding allows tiny drift)
  for (int i = 0; i < 6; ++i)
    CHECK(std::abs(r3.metrics[i].elbo - r1.metrics[6 + i].elbo) < 1e-3);
  fs::remove_all(d1);
  fs::remove_all(d2);
  fs::remove_all(d3);
}
