#include <benchmark/benchmark.h>

#include "poex/model.hpp"
#include "poex/nets.hpp"

using namespace poex;

namespace {

MaskedSet bench_set(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  MaskedSet s;
  s.d = d;
  for (int i = 0; i < n; ++i) {
    MaskedElement e;
    e.values = Eigen::VectorXd::NullaryExpr(d, [&](Eigen::Index) { return rand_normal(rng); });
    e.mask.obs = Eigen::VectorXi::Zero(d);
    e.mask.query = Eigen::VectorXi::Zero(d);
    for (int j = 0; j < d; ++j)
      (rand_uniform(rng) < 0.5 ? e.mask.obs[j] : e.mask.query[j]) = 1;
    s.elements.push_back(std::move(e));
  }
  return s;
}

ModelConfig bench_model(int n_latent, int embed) {
  ModelConfig cfg;
  cfg.d = 3;
  cfg.nets.embed_dim = embed;
  cfg.nets.latent_dim = n_latent;
  cfg.nets.heads = 4;
  cfg.nets.blocks = 2;
  cfg.nets.hidden = embed;
  cfg.seed = 1;
  return cfg;
}

void BM_AttentionForward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  NetConfig nc;
  nc.embed_dim = 32;
  nc.heads = 4;
  nc.hidden = 32;
  ParamStore ps;
  Rng data_rng(2);
  ad::Mat rows = ad::Mat::NullaryExpr(n, 32, [&](Eigen::Index) { return rand_normal(data_rng); });
  {
    Rng init(3);
    ad::Tape t;
    NetCtx c{t, ps, &init, nc};
    (void)attention_block(c, "blk", t.leaf(rows), t.leaf(rows));
  }
  for (auto _ : state) {
    ad::Tape t;
    NetCtx c{t, ps, nullptr, nc};
    ad::Var x = t.leaf(rows);
    benchmark::DoNotOptimize(attention_block(c, "blk", x, x)->val.sum());
  }
}
BENCHMARK(BM_AttentionForward)->Arg(16)->Arg(64)->Arg(256);

void BM_AttentionBackward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  NetConfig nc;
  nc.embed_dim = 32;
  nc.heads = 4;
  nc.hidden = 32;
  ParamStore ps;
  Rng data_rng(4);
  ad::Mat rows = ad::Mat::NullaryExpr(n, 32, [&](Eigen::Index) { return rand_normal(data_rng); });
  {
    Rng init(5);
    ad::Tape t;
    NetCtx c{t, ps, &init, nc};
    (void)attention_block(c, "blk", t.leaf(rows), t.leaf(rows));
  }
  for (auto _ : state) {
    ps.zero_grads();
    ad::Tape t;
    NetCtx c{t, ps, nullptr, nc};
    ad::Var x = t.leaf(rows);
    ad::Var y = ad::sum(t, attention_block(c, "blk", x, x));
    t.backward(y);
    benchmark::DoNotOptimize(y->val(0, 0));
  }
}
BENCHMARK(BM_AttentionBackward)->Arg(16)->Arg(64)->Arg(256);

void BM_ElboStep(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  PoexModel m(bench_model(8, 32));
  MaskedSet s = bench_set(n, 3, 6);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    m.params().zero_grads();
    auto parts = m.elbo_backward(s, 1, ++seed, 1.0);
    benchmark::DoNotOptimize(parts.elbo);
  }
}
BENCHMARK(BM_ElboStep)->Arg(8)->Arg(32)->Arg(128);

void BM_QuadratureLoglik(benchmark::State& state) {
  PoexModel m(bench_model(2, 16));
  MaskedSet s = bench_set(static_cast<int>(state.range(0)), 3, 7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(m.marginal_loglik_quadrature(s, 64));
  }
}
BENCHMARK(BM_QuadratureLoglik)->Arg(8)->Arg(32);

}  // namespace

BENCHMARK_MAIN();
