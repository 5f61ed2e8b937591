#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "poex/experiments.hpp"
#include "poex/oracle.hpp"

using namespace poex;

TEST_CASE("experiments: mtgp draws have the requested shape and correlation") {
  MtgpSpec spec;
  spec.k_tasks = 3;
  spec.c = 0.95;
  spec.n_points = 25;
  Rng rng(11);

  // empirical inter-task correlation of latent values over many draws
  double sum_xy = 0, sum_xx = 0, sum_yy = 0;
  for (int draw = 0; draw < 200; ++draw) {
    MtgpDraw d = generate_mtgp(spec, rng);
    REQUIRE(d.fs.size() == 3);
    REQUIRE(d.latent.rows() == 3);
    REQUIRE(d.latent.cols() == 25);
    REQUIRE(d.inputs.size() == 25);
    for (const auto& f : d.fs.functions) {
      REQUIRE(f.size() == 25);
      for (const auto& e : f.elements) {
        REQUIRE(e.index.has_value());
        REQUIRE(e.index->size() == 1);
      }
    }
    for (int j = 0; j < 25; ++j) {
      sum_xy += d.latent(0, j) * d.latent(1, j);
      sum_xx += d.latent(0, j) * d.latent(0, j);
      sum_yy += d.latent(1, j) * d.latent(1, j);
    }
  }
  double corr = sum_xy / std::sqrt(sum_xx * sum_yy);
  CHECK(corr > 0.9);
  CHECK(corr < 1.0);
}

TEST_CASE("experiments: full correlation makes tasks identical") {
  MtgpSpec spec;
  spec.k_tasks = 2;
  spec.c = 1.0;
  spec.noise_std = 0.0;
  spec.n_points = 15;
  Rng rng(12);
  // identical up to the 1e-8 diagonal jitter the sampler adds for stability
  MtgpDraw d = generate_mtgp(spec, rng);
  CHECK((d.latent.row(0) - d.latent.row(1)).cwiseAbs().maxCoeff() < 1e-2);
}

TEST_CASE("experiments: biased clouds concentrate near the center") {
  BiasedCloudSpec spec;
  spec.n_total = 400;
  spec.n_keep = 40;
  spec.temperature = 0.1;
  Rng rng(13);
  int closer = 0;
  for (int trial = 0; trial < 10; ++trial) {
    BiasedCloudDraw d = generate_biased_cloud(spec, rng);
    REQUIRE(d.biased.size() == 40);
    REQUIRE(d.uniform_ref.size() == 400);
    auto mean_dist = [&](const MaskedSet& s) {
      Eigen::MatrixXd pts = set_points(s);
      double total = 0;
      for (int i = 0; i < pts.rows(); ++i)
        total += (pts.row(i).transpose() - spec.center).norm();
      return total / pts.rows();
    };
    if (mean_dist(d.biased) < mean_dist(d.uniform_ref)) ++closer;
  }
  CHECK(closer == 10);
}

TEST_CASE("experiments: glyph sets are class pure with the right shape") {
  Rng rng(14);
  Eigen::MatrixXd images(30, 16);  // 4x4 toy glyphs, value = label/10
  std::vector<int> labels(30);
  for (int i = 0; i < 30; ++i) {
    labels[i] = i % 3;
    images.row(i).setConstant(labels[i] / 10.0);
  }
  auto sets = glyph_sets(images, labels, {0, 1, 2}, 5, 6, {4, 4, 1}, rng);
  REQUIRE(sets.size() == 6);
  for (const auto& s : sets) {
    REQUIRE(s.size() == 5);
    REQUIRE(s.d == 16);
    REQUIRE(s.grid.has_value());
    // all elements share one class (constant pixel value per label here)
    double v0 = s.elements[0].values[0];
    for (const auto& e : s.elements)
      CHECK(e.values[0] == v0);
  }
}

TEST_CASE("experiments: greedy compression matches the brute-force oracle") {
  // score functor from an exact discrete mixture; compare the greedy driver
  // against explicit enumeration of each greedy step
  Rng rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    int n = 6 + static_cast<int>(rand_uniform(rng) * 3);  // 6..8
    DiscreteMixtureModel dm = DiscreteMixtureModel::random(3, 4, rng);
    MaskedSet s = random_binary_set(n, 4, dm, rng);
    for (auto& e : s.elements) {
      e.mask.obs.setOnes();
      e.mask.query.setZero();
    }
    auto loglik = [&](int i, const std::vector<int>& sel) {
      return std::log(dm.conditional_prob_full(s, i, sel));
    };

    int budget = 3;
    std::vector<int> got = greedy_compress(n, budget, loglik);

    // oracle: at each step add the element whose conditional likelihood given
    // the current selection is lowest (hardest to predict), lowest index wins
    std::vector<int> oracle;
    std::set<int> chosen;
    for (int step = 0; step < budget; ++step) {
      int best = -1;
      double best_ll = std::numeric_limits<double>::infinity();
      for (int i = 0; i < n; ++i) {
        if (chosen.count(i)) continue;
        double ll = loglik(i, oracle);
        if (ll < best_ll - 1e-15) {
          best_ll = ll;
          best = i;
        }
      }
      oracle.push_back(best);
      chosen.insert(best);
    }
    CHECK(got == oracle);
  }
}

TEST_CASE("experiments: baseline subset selectors return valid subsets") {
  Rng rng(16);
  Eigen::MatrixXd pts(20, 3);
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 3; ++j) pts(i, j) = rand_normal(rng);

  for (auto& sel : {uniform_subset(20, 6, rng), kmeans_subset(pts, 6, rng),
                    farthest_point_subset(pts, 6, rng)}) {
    REQUIRE(sel.size() == 6);
    std::set<int> uniq(sel.begin(), sel.end());
    CHECK(uniq.size() == 6);
    for (int i : sel) {
      CHECK(i >= 0);
      CHECK(i < 20);
    }
  }
}

TEST_CASE("experiments: farthest point spreads further than uniform") {
  Rng rng(17);
  // two tight clusters; farthest-point must cover both
  Eigen::MatrixXd pts(40, 2);
  for (int i = 0; i < 40; ++i) {
    double cx = i < 36 ? 0.0 : 10.0;
    pts(i, 0) = cx + 0.01 * rand_normal(rng);
    pts(i, 1) = 0.01 * rand_normal(rng);
  }
  auto sel = farthest_point_subset(pts, 2, rng);
  double spread = (pts.row(sel[0]) - pts.row(sel[1])).norm();
  CHECK(spread > 5.0);
}

TEST_CASE("experiments: set/points round trip") {
  Rng rng(18);
  Eigen::MatrixXd pts(7, 3);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 3; ++j) pts(i, j) = rand_normal(rng);
  MaskedSet s = points_to_set(pts);
  REQUIRE(s.size() == 7);
  for (const auto& e : s.elements) {
    CHECK(e.mask.obs.sum() == 3);
    CHECK(e.mask.query.sum() == 0);
  }
  CHECK((set_points(s) - pts).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("experiments: impute/expand/np pipelines produce the right shapes") {
  ModelConfig cfg;
  cfg.task = TaskKind::indexed;
  cfg.decoder = DecoderKind::gaussian;
  cfg.d = 1;
  cfg.t_dim = 1;
  cfg.t_embed_dim = 8;
  cfg.nets.embed_dim = 8;
  cfg.nets.latent_dim = 2;
  cfg.nets.heads = 2;
  cfg.nets.blocks = 1;
  cfg.nets.hidden = 8;
  cfg.flow_blocks = 1;
  cfg.coupling_blocks = 2;
  cfg.seed = 3;
  PoexModel m(cfg);
  m.trained = true;

  Rng rng(19);
  MaskedSet ctx;
  ctx.d = 1;
  for (int i = 0; i < 5; ++i) {
    MaskedElement e;
    e.values = Eigen::VectorXd::Constant(1, std::sin(0.3 * i));
    e.mask.obs = Eigen::VectorXi::Ones(1);
    e.mask.query = Eigen::VectorXi::Zero(1);
    e.index = Eigen::VectorXd::Constant(1, 0.1 * i);
    ctx.elements.push_back(e);
  }

  std::vector<Eigen::VectorXd> targets;
  for (int i = 0; i < 4; ++i)
    targets.push_back(Eigen::VectorXd::Constant(1, 0.05 + 0.2 * i));
  NpPrediction pred = np_predict(ctx, targets, m, 8, rng);
  REQUIRE(pred.mean.rows() == 4);
  REQUIRE(pred.mean.cols() == 1);
  REQUIRE(pred.stddev.rows() == 4);
  CHECK((pred.stddev.array() >= 0.0).all());
  REQUIRE(pred.samples.size() == 8);

  Eigen::MatrixXd expanded = expand_set(ctx, m, 3, rng);
  REQUIRE(expanded.rows() == 3);
  REQUIRE(expanded.cols() == 1);
  for (int i = 0; i < 3; ++i) CHECK(std::isfinite(expanded(0, 0)));

  MaskedSet with_query = ctx;
  with_query.elements[4].mask.obs[0] = 0;
  with_query.elements[4].mask.query[0] = 1;
  ImputeResult ir = impute_set(with_query, m, 3, rng);
  REQUIRE(ir.samples.size() == 3);
  REQUIRE(ir.samples[0].rows() == 5);
  REQUIRE(ir.loglik.size() == 5);
  CHECK(!ir.proxy);  // L = 2 keeps the exact quadrature path
}
