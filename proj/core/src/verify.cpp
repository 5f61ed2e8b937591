#include "poex/verify.hpp"

#include <cmath>
#include <sstream>

#include "poex/decoder.hpp"
#include "poex/flow.hpp"
#include "poex/model.hpp"
#include "poex/oracle.hpp"

namespace poex {
namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << std::scientific << v;
  return os.str();
}

MaskedSet random_vector_set(int n, int d, Rng& rng, double p_obs = 0.5) {
  MaskedSet s;
  s.d = d;
  for (int i = 0; i < n; ++i) {
    MaskedElement e;
    e.values = Eigen::VectorXd::NullaryExpr(d, [&](Eigen::Index) { return rand_normal(rng); });
    e.mask.obs = Eigen::VectorXi::Zero(d);
    e.mask.query = Eigen::VectorXi::Zero(d);
    for (int j = 0; j < d; ++j) {
      if (rand_uniform(rng) < p_obs)
        e.mask.obs(j) = 1;
      else
        e.mask.query(j) = 1;
    }
    s.elements.push_back(std::move(e));
  }
  // keep at least one observed and one query entry overall
  s.elements[0].mask.obs(0) = 1;
  s.elements[0].mask.query(0) = 0;
  int last = d - 1;
  s.elements[n - 1].mask.query(last) = 1;
  s.elements[n - 1].mask.obs(last) = 0;
  return s;
}

ModelConfig tiny_config(TaskKind task, DecoderKind dec, std::uint64_t seed) {
  ModelConfig mc;
  mc.task = task;
  mc.decoder = dec;
  mc.d = 3;
  mc.t_dim = (task == TaskKind::indexed || task == TaskKind::multitask) ? 1 : 0;
  mc.t_embed_dim = task == TaskKind::set ? 0 : 8;
  mc.nets.embed_dim = 8;
  mc.nets.latent_dim = 2;
  mc.nets.heads = 2;
  mc.nets.blocks = 1;
  mc.nets.hidden = 8;
  mc.flow_blocks = 1;
  mc.coupling_blocks = 2;
  mc.seed = seed;
  return mc;
}

MaskedSet indexed_set(int n, int d, Rng& rng) {
  MaskedSet s = random_vector_set(n, d, rng);
  for (int i = 0; i < n; ++i)
    s.elements[i].index = Eigen::VectorXd::Constant(1, static_cast<double>(i) / n);
  return s;
}

FunctionSet random_function_set(int k, int n, int d, Rng& rng) {
  FunctionSet fs;
  for (int i = 0; i < k; ++i) fs.functions.push_back(indexed_set(n, d, rng));
  return fs;
}

VerifyResult check_theorem1(std::uint64_t seed) {
  Rng rng(combine_seed(seed, 0x7468ULL));
  double worst = 0;
  int cases = 0;
  struct Cfg { int k, d, n; };
  for (Cfg c : {Cfg{2, 3, 2}, Cfg{3, 4, 3}, Cfg{4, 6, 4}, Cfg{6, 8, 3}, Cfg{8, 10, 2}}) {
    for (int rep = 0; rep < 4; ++rep) {
      auto dm = DiscreteMixtureModel::random(c.k, c.d, rng);
      auto s = random_binary_set(c.n, c.d, dm, rng);
      auto [lhs, rhs] = theorem1_oracle(dm, s);
      double err = std::abs(lhs - rhs) / std::max(1e-300, std::abs(lhs));
      worst = std::max(worst, err);
      ++cases;
    }
  }
  return {"theorem1.factorization", worst <= 1e-12,
          std::to_string(cases) + " cases, max rel err " + fmt(worst)};
}

VerifyResult check_gradients(std::uint64_t seed) {
  double worst = 0;
  std::string at;
  struct Case { TaskKind task; DecoderKind dec; const char* label; };
  for (Case cs : {Case{TaskKind::set, DecoderKind::gaussian, "set/gaussian"},
                  Case{TaskKind::set, DecoderKind::coupling, "set/coupling"},
                  Case{TaskKind::indexed, DecoderKind::gaussian, "indexed"},
                  Case{TaskKind::multitask, DecoderKind::gaussian, "multitask"}}) {
    PoexModel m(tiny_config(cs.task, cs.dec, combine_seed(seed, 11)));
    Rng rng(combine_seed(seed, 0x6772ULL));
    AnySet s;
    if (cs.task == TaskKind::multitask)
      s = random_function_set(2, 3, 3, rng);
    else if (cs.task == TaskKind::indexed)
      s = indexed_set(4, 3, rng);
    else
      s = random_vector_set(4, 3, rng);
    double err = m.gradient_check(s, 50, 1e-5, combine_seed(seed, 13));
    if (err > worst) {
      worst = err;
      at = cs.label;
    }
  }
  return {"gradients.finite_difference", worst <= 1e-4,
          "max rel err " + fmt(worst) + " (" + at + ")"};
}

VerifyResult check_invariance(std::uint64_t seed) {
  Rng rng(combine_seed(seed, 0x696eULL));
  double worst = 0;

  PoexModel m(tiny_config(TaskKind::set, DecoderKind::coupling, combine_seed(seed, 21)));
  MaskedSet s = random_vector_set(5, 3, rng);
  auto base = m.elbo(s, 2, 7);
  std::vector<int> order = {4, 2, 0, 3, 1};
  auto perm = m.elbo(s.permuted(order), 2, 7);
  worst = std::max(worst, std::abs(base.elbo - perm.elbo) /
                              std::max(1.0, std::abs(base.elbo)));

  PoexModel mt(tiny_config(TaskKind::multitask, DecoderKind::gaussian, combine_seed(seed, 22)));
  FunctionSet fs = random_function_set(3, 4, 3, rng);
  auto b2 = mt.elbo(fs, 2, 9);
  FunctionSet fsp;
  fsp.functions = {fs.functions[2], fs.functions[0], fs.functions[1]};
  auto p2 = mt.elbo(fsp, 2, 9);
  worst = std::max(worst, std::abs(b2.elbo - p2.elbo) / std::max(1.0, std::abs(b2.elbo)));

  return {"invariance.elbo_permutation", worst <= 1e-9, "max rel diff " + fmt(worst)};
}

VerifyResult check_flows(std::uint64_t seed) {
  double worst = 0;

  // prior flow: sampled log-density must match the tape evaluation
  {
    ParamStore ps;
    NetConfig cfg;
    cfg.embed_dim = 6;
    cfg.latent_dim = 2;
    cfg.hidden = 8;
    LatentFlow flow("f", 2, 2, 8, combine_seed(seed, 31));
    Rng init(combine_seed(seed, 32));
    Eigen::RowVectorXd cond = Eigen::RowVectorXd::LinSpaced(6, -1, 1);
    {
      ad::Tape t;
      NetCtx c{t, ps, &init, cfg};
      ad::Var th = t.leaf(Eigen::MatrixXd::Zero(1, 2));
      ad::Var cd = t.leaf(cond);
      (void)flow.log_prob(c, th, cd);
    }
    Rng rng(combine_seed(seed, 33));
    for (int rep = 0; rep < 8; ++rep) {
      ad::Tape t;
      NetCtx c{t, ps, nullptr, cfg};
      double lp_sample = 0;
      Eigen::RowVectorXd theta = flow.sample(c, cond, rng, &lp_sample);
      ad::Var th = t.leaf(theta);
      ad::Var cd = t.leaf(cond);
      double lp_eval = flow.log_prob(c, th, cd)->val(0, 0);
      worst = std::max(worst, std::abs(lp_sample - lp_eval));
    }
  }

  // decoder flow: same self-consistency through the coupling stack
  {
    ParamStore ps;
    NetConfig cfg;
    cfg.hidden = 8;
    Decoder dec("d", DecoderKind::coupling, 3, 8, 2);
    Rng init(combine_seed(seed, 34));
    int n = 4, ctx_cols = 5;
    Eigen::MatrixXd ctx(n, ctx_cols);
    Rng rng(combine_seed(seed, 35));
    for (int i = 0; i < ctx.size(); ++i) ctx(i / ctx_cols, i % ctx_cols) = rand_normal(rng);
    Eigen::MatrixXi query(n, 3);
    query << 1, 1, 0, 0, 1, 1, 1, 0, 1, 1, 1, 1;
    Eigen::MatrixXd frozen = Eigen::MatrixXd::Zero(n, 3);
    {
      ad::Tape t;
      NetCtx c{t, ps, &init, cfg};
      (void)dec.log_prob_rows(c, frozen, t.leaf(ctx), query);
    }
    for (int rep = 0; rep < 4; ++rep) {
      ad::Tape t;
      NetCtx c{t, ps, nullptr, cfg};
      Eigen::VectorXd lp_sample;
      Eigen::MatrixXd y = dec.sample(c, t.leaf(ctx), frozen, query, rng, false, &lp_sample);
      ad::Var lp = dec.log_prob_rows(c, y, t.leaf(ctx), query);
      for (int i = 0; i < n; ++i)
        worst = std::max(worst, std::abs(lp_sample(i) - lp->val(i, 0)));
    }
  }

  return {"flows.inverse_consistency", worst <= 1e-6, "max abs diff " + fmt(worst)};
}

VerifyResult check_bound(std::uint64_t seed) {
  PoexModel m(tiny_config(TaskKind::set, DecoderKind::gaussian, combine_seed(seed, 41)));
  Rng rng(combine_seed(seed, 42));
  double worst_gap = -1e300;
  for (int rep = 0; rep < 3; ++rep) {
    MaskedSet s = random_vector_set(3, 3, rng);
    double mass = 0;
    double logp = m.marginal_loglik_quadrature(s, 120, 8.0, &mass);
    double elbo_avg = 0;
    int reps = 64;
    for (int k = 0; k < reps; ++k) elbo_avg += m.elbo(s, 4, 1000 + k).elbo;
    elbo_avg /= reps;
    // MC noise allowance on the averaged estimate
    worst_gap = std::max(worst_gap, elbo_avg - logp);
    if (mass < 0.999) return {"bound.elbo_vs_marginal", false,
                              "quadrature grid captured mass " + fmt(mass)};
  }
  return {"bound.elbo_vs_marginal", worst_gap <= 0.05,
          "max (elbo - log p) = " + fmt(worst_gap) + ", want <= 5e-2"};
}

}  // namespace

std::vector<VerifyResult> run_verify_suite(const std::string& suite, std::uint64_t seed) {
  std::vector<VerifyResult> out;
  bool all = suite == "all";
  if (all || suite == "theorem1") out.push_back(check_theorem1(seed));
  if (all || suite == "gradients") out.push_back(check_gradients(seed));
  if (all || suite == "invariance") out.push_back(check_invariance(seed));
  if (all || suite == "flows") out.push_back(check_flows(seed));
  if (all || suite == "bound") out.push_back(check_bound(seed));
  if (out.empty())
    throw std::invalid_argument("unknown suite \"" + suite +
                                "\" (theorem1|gradients|invariance|flows|bound|all)");
  return out;
}

}  // namespace poex
