#include "poex/experiments.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace poex {

void MtgpSpec::validate() const {
  if (k_tasks < 1) throw std::invalid_argument("need K >= 1 tasks");
  if (k_tasks > 1 && (c <= -1.0 / (k_tasks - 1) || c > 1.0))
    throw std::invalid_argument("task correlation breaks positive semidefiniteness");
  if (lengthscale <= 0) throw std::invalid_argument("lengthscale must be > 0");
  if (noise_std < 0) throw std::invalid_argument("noise std must be >= 0");
  if (n_points < 1) throw std::invalid_argument("need n_points >= 1");
  if (t_hi <= t_lo) throw std::invalid_argument("empty input range");
}

MtgpDraw generate_mtgp(const MtgpSpec& spec, Rng& rng) {
  spec.validate();
  const int K = spec.k_tasks, n = spec.n_points;
  MtgpDraw draw;
  draw.inputs.resize(n);
  for (int i = 0; i < n; ++i)
    draw.inputs[i] = spec.t_lo + (spec.t_hi - spec.t_lo) * rand_uniform(rng);
  std::sort(draw.inputs.data(), draw.inputs.data() + n);

  Eigen::MatrixXd Kf = Eigen::MatrixXd::Constant(K, K, spec.c);
  Kf.diagonal().setOnes();
  Eigen::MatrixXd Kx(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double d = (draw.inputs[i] - draw.inputs[j]) / spec.lengthscale;
      Kx(i, j) = std::exp(-0.5 * d * d);
    }
  // full covariance over (task, input) pairs, Kronecker structured
  const int m = K * n;
  Eigen::MatrixXd cov(m, m);
  for (int a = 0; a < K; ++a)
    for (int b = 0; b < K; ++b)
      cov.block(a * n, b * n, n, n) = Kf(a, b) * Kx;
  cov.diagonal().array() += 1e-8;
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw NumericError("MTGP covariance is not positive definite after jitter");
  Eigen::VectorXd z(m);
  for (int i = 0; i < m; ++i) z[i] = rand_normal(rng);
  Eigen::VectorXd f = llt.matrixL() * z;

  draw.latent.resize(K, n);
  for (int a = 0; a < K; ++a) draw.latent.row(a) = f.segment(a * n, n).transpose();

  for (int a = 0; a < K; ++a) {
    MaskedSet fn;
    fn.d = 1;
    for (int i = 0; i < n; ++i) {
      MaskedElement e;
      e.values = Eigen::VectorXd::Constant(1, draw.latent(a, i) +
                                                  spec.noise_std * rand_normal(rng));
      e.mask.obs = Eigen::VectorXi::Zero(1);
      e.mask.query = Eigen::VectorXi::Ones(1);
      e.index = Eigen::VectorXd::Constant(1, draw.inputs[i]);
      fn.elements.push_back(std::move(e));
    }
    draw.fs.functions.push_back(std::move(fn));
  }
  draw.fs = with_function_masks(draw.fs, FunctionSubset{spec.max_obs}, rng);
  return draw;
}

void BiasedCloudSpec::validate() const {
  if (n_keep > n_total || n_keep < 1)
    throw std::invalid_argument("need 1 <= n_keep <= n_total");
  if (temperature <= 0) throw std::invalid_argument("temperature must be > 0");
}

namespace {

Eigen::Vector3d surface_point(BiasedCloudSpec::Surface kind, Rng& rng) {
  switch (kind) {
    case BiasedCloudSpec::Surface::sphere: {
      Eigen::Vector3d v(rand_normal(rng), rand_normal(rng), rand_normal(rng));
      return v.normalized();
    }
    case BiasedCloudSpec::Surface::torus: {
      // area-uniform via rejection on the minor angle
      const double R = 1.0, r = 0.4;
      double u = 2 * M_PI * rand_uniform(rng);
      double v;
      while (true) {
        v = 2 * M_PI * rand_uniform(rng);
        if (rand_uniform(rng) < (R + r * std::cos(v)) / (R + r)) break;
      }
      return {(R + r * std::cos(v)) * std::cos(u),
              (R + r * std::cos(v)) * std::sin(u), r * std::sin(v)};
    }
    case BiasedCloudSpec::Surface::superellipsoid: {
      Eigen::Vector3d v(rand_normal(rng), rand_normal(rng), rand_normal(rng));
      v.normalize();
      auto shape = [](double x) {
        return std::copysign(std::pow(std::abs(x), 0.6), x);
      };
      return {shape(v.x()), shape(v.y()), shape(v.z())};
    }
  }
  throw std::logic_error("unknown surface");
}

}  // namespace

MaskedSet points_to_set(const Eigen::MatrixXd& points, bool observed) {
  MaskedSet s;
  s.d = static_cast<int>(points.cols());
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    MaskedElement e;
    e.values = points.row(i).transpose();
    e.mask.obs = observed ? Eigen::VectorXi::Ones(s.d) : Eigen::VectorXi::Zero(s.d);
    e.mask.query = observed ? Eigen::VectorXi::Zero(s.d) : Eigen::VectorXi::Ones(s.d);
    s.elements.push_back(std::move(e));
  }
  return s;
}

Eigen::MatrixXd set_points(const MaskedSet& s) {
  Eigen::MatrixXd p(s.size(), s.d);
  for (int i = 0; i < s.size(); ++i) p.row(i) = s.elements[i].values.transpose();
  return p;
}

BiasedCloudDraw generate_biased_cloud(const BiasedCloudSpec& spec, Rng& rng) {
  spec.validate();
  Eigen::MatrixXd cand(spec.n_total, 3), ref(spec.n_total, 3);
  for (int i = 0; i < spec.n_total; ++i) {
    cand.row(i) = surface_point(spec.surface, rng).transpose();
    ref.row(i) = surface_point(spec.surface, rng).transpose();
  }
  // softmax weights over squared distance to the center
  Eigen::VectorXd logits(spec.n_total);
  for (int i = 0; i < spec.n_total; ++i) {
    double d2 = (cand.row(i).transpose() - spec.center).squaredNorm();
    logits[i] = spec.bias_sign * d2 / (spec.temperature * spec.temperature);
  }
  // weighted sampling without replacement (Gumbel top-k)
  std::vector<std::pair<double, int>> keys(spec.n_total);
  for (int i = 0; i < spec.n_total; ++i) {
    double g = -std::log(-std::log(std::max(1e-300, rand_uniform(rng))));
    keys[i] = {logits[i] + g, i};
  }
  std::partial_sort(keys.begin(), keys.begin() + spec.n_keep, keys.end(),
                    [](auto& a, auto& b) { return a.first > b.first; });
  Eigen::MatrixXd kept(spec.n_keep, 3);
  for (int i = 0; i < spec.n_keep; ++i) kept.row(i) = cand.row(keys[i].second);

  BiasedCloudDraw out;
  out.biased = points_to_set(kept);
  out.uniform_ref = points_to_set(ref);
  return out;
}

std::vector<MaskedSet> glyph_sets(const Eigen::MatrixXd& images,
                                  const std::vector<int>& labels,
                                  const std::vector<int>& classes, int set_size,
                                  int n_sets, const std::array<int, 3>& grid,
                                  Rng& rng) {
  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<MaskedSet> out;
  for (int k = 0; k < n_sets; ++k) {
    int cls = classes[k % classes.size()];
    auto it = by_class.find(cls);
    if (it == by_class.end() || static_cast<int>(it->second.size()) < set_size)
      throw std::invalid_argument("not enough images for class " +
                                  std::to_string(cls));
    std::vector<int> pool = it->second;
    std::shuffle(pool.begin(), pool.end(), rng);
    MaskedSet s;
    s.d = static_cast<int>(images.cols());
    s.grid = grid;
    for (int i = 0; i < set_size; ++i) {
      MaskedElement e;
      e.values = images.row(pool[i]).transpose();
      e.mask.obs = Eigen::VectorXi::Ones(s.d);
      e.mask.query = Eigen::VectorXi::Zero(s.d);
      s.elements.push_back(std::move(e));
    }
    out.push_back(std::move(s));
  }
  return out;
}

ImputeResult impute_set(const MaskedSet& s, PoexModel& m, int n_samples, Rng& rng) {
  if (!m.trained)
    throw std::runtime_error("refusing to impute with an untrained model");
  ImputeResult res;
  for (int k = 0; k < n_samples; ++k)
    res.samples.push_back(m.impute(s, rng, false, nullptr));
  // ground-truth log-likelihood: quadrature when tractable, ELBO proxy otherwise
  bool any_query = false;
  for (const auto& e : s.elements) any_query |= (e.mask.query.sum() > 0);
  if (!any_query) {
    res.loglik = Eigen::VectorXd::Zero(s.size());
    res.proxy = false;
    return res;
  }
  if (m.config().nets.latent_dim <= 2) {
    res.proxy = false;
    res.loglik.resize(s.size());
    // per-element conditional: full-set quadrature with one-element queries
    for (int i = 0; i < s.size(); ++i) {
      MaskedSet si = s;
      for (int j = 0; j < s.size(); ++j) {
        if (j == i) continue;
        si.elements[j].mask.query.setZero();
      }
      if (si.elements[i].mask.query.sum() == 0) {
        res.loglik[i] = 0.0;
        continue;
      }
      res.loglik[i] = m.marginal_loglik_quadrature(si);
    }
  } else {
    res.proxy = true;
    res.loglik.resize(s.size());
    Rng prior_rng = make_rng(combine_seed(content_hash(s), 0x11));
    Eigen::VectorXd ll;
    m.impute(s, prior_rng, true, &ll);
    res.loglik = ll;
  }
  return res;
}

Eigen::MatrixXd expand_set(const MaskedSet& s, PoexModel& m, int n_new, Rng& rng) {
  int observed = 0;
  for (const auto& e : s.elements)
    if (e.mask.obs.sum() > 0) ++observed;
  if (observed == 0)
    throw std::invalid_argument("expansion needs at least one observed element");
  if (n_new == 0) return Eigen::MatrixXd(0, s.d);
  MaskedSet aug = s;
  for (int k = 0; k < n_new; ++k) {
    MaskedElement e;
    e.values = Eigen::VectorXd::Zero(s.d);
    e.mask.obs = Eigen::VectorXi::Zero(s.d);
    e.mask.query = Eigen::VectorXi::Ones(s.d);
    if (!s.elements.empty() && s.elements[0].index)
      e.index = *s.elements[0].index;
    aug.elements.push_back(std::move(e));
  }
  Eigen::MatrixXd filled = m.impute(aug, rng, false, nullptr);
  return filled.bottomRows(n_new);
}

double conditional_entropy_estimate(int i, const MaskedSet& s,
                                    const std::vector<int>& selected,
                                    PoexModel& m, bool* proxy) {
  for (int j : selected)
    if (j == i) throw std::invalid_argument("element already selected");
  // selected elements become the fully observed context, element i the query
  MaskedSet cond;
  cond.d = s.d;
  cond.grid = s.grid;
  for (int j : selected) {
    MaskedElement e = s.elements[j];
    e.mask.obs = Eigen::VectorXi::Ones(s.d);
    e.mask.query = Eigen::VectorXi::Zero(s.d);
    cond.elements.push_back(std::move(e));
  }
  MaskedElement q = s.elements[i];
  q.mask.obs = Eigen::VectorXi::Zero(s.d);
  q.mask.query = Eigen::VectorXi::Ones(s.d);
  cond.elements.push_back(std::move(q));

  if (m.config().nets.latent_dim <= 2) {
    if (proxy) *proxy = false;
    return -m.marginal_loglik_quadrature(cond, 64);
  }
  if (proxy) *proxy = true;
  Rng rng = make_rng(combine_seed(content_hash(cond), 0x51));
  Eigen::VectorXd ll;
  m.impute(cond, rng, true, &ll);
  return -ll[cond.size() - 1];
}

std::vector<int> greedy_compress(
    int n, int budget,
    const std::function<double(int, const std::vector<int>&)>& loglik) {
  if (budget < 1 || budget > n)
    throw std::invalid_argument("budget must lie in [1, N]");
  std::vector<int> selected;
  std::vector<bool> taken(n, false);
  for (int step = 0; step < budget; ++step) {
    int best = -1;
    double best_ll = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      if (taken[i]) continue;
      double ll = loglik(i, selected);
      if (ll < best_ll) {  // strict: ties go to the lowest index
        best_ll = ll;
        best = i;
      }
    }
    taken[best] = true;
    selected.push_back(best);
  }
  return selected;
}

std::vector<int> greedy_compress(const MaskedSet& s, int budget, PoexModel& m) {
  return greedy_compress(s.size(), budget,
                         [&](int i, const std::vector<int>& sel) {
                           return -conditional_entropy_estimate(i, s, sel, m);
                         });
}

NpPrediction np_predict(const MaskedSet& context,
                        const std::vector<Eigen::VectorXd>& targets, PoexModel& m,
                        int n_samples, Rng& rng) {
  NpPrediction out;
  const int d = m.config().d;
  if (targets.empty()) {
    out.mean.resize(0, d);
    out.stddev.resize(0, d);
    return out;
  }
  MaskedSet aug = context;
  aug.d = d;
  for (const auto& t : targets) {
    MaskedElement e;
    e.values = Eigen::VectorXd::Zero(d);
    e.mask.obs = Eigen::VectorXi::Zero(d);
    e.mask.query = Eigen::VectorXi::Ones(d);
    e.index = t;
    aug.elements.push_back(std::move(e));
  }
  const int n_ctx = context.size(), n_tgt = static_cast<int>(targets.size());
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n_tgt, d);
  Eigen::MatrixXd sum_sq = Eigen::MatrixXd::Zero(n_tgt, d);
  for (int k = 0; k < std::max(1, n_samples); ++k) {
    Eigen::MatrixXd filled = m.impute(aug, rng, false, nullptr);
    Eigen::MatrixXd tgt = filled.bottomRows(n_tgt);
    out.samples.push_back(tgt);
    sum += tgt;
    sum_sq += tgt.cwiseProduct(tgt);
  }
  const double ns = static_cast<double>(out.samples.size());
  out.mean = sum / ns;
  out.stddev = ((sum_sq / ns - out.mean.cwiseProduct(out.mean)).cwiseMax(0.0))
                   .cwiseSqrt();
  (void)n_ctx;
  return out;
}

std::vector<int> uniform_subset(int n, int budget, Rng& rng) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(budget);
  return idx;
}

std::vector<int> kmeans_subset(const Eigen::MatrixXd& points, int budget, Rng& rng,
                               int iters) {
  const int n = static_cast<int>(points.rows());
  std::vector<int> centers = uniform_subset(n, budget, rng);
  Eigen::MatrixXd mu(budget, points.cols());
  for (int k = 0; k < budget; ++k) mu.row(k) = points.row(centers[k]);
  std::vector<int> assign(n, 0);
  for (int it = 0; it < iters; ++it) {
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int k = 0; k < budget; ++k) {
        double dd = (points.row(i) - mu.row(k)).squaredNorm();
        if (dd < best) {
          best = dd;
          assign[i] = k;
        }
      }
    }
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(budget, points.cols());
    Eigen::VectorXd cnt = Eigen::VectorXd::Zero(budget);
    for (int i = 0; i < n; ++i) {
      acc.row(assign[i]) += points.row(i);
      cnt[assign[i]] += 1;
    }
    for (int k = 0; k < budget; ++k)
      if (cnt[k] > 0) mu.row(k) = acc.row(k) / cnt[k];
  }
  // nearest point to each center
  std::vector<int> out;
  std::vector<bool> used(n, false);
  for (int k = 0; k < budget; ++k) {
    int best = -1;
    double bd = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      if (used[i]) continue;
      double dd = (points.row(i) - mu.row(k)).squaredNorm();
      if (dd < bd) {
        bd = dd;
        best = i;
      }
    }
    used[best] = true;
    out.push_back(best);
  }
  return out;
}

std::vector<int> farthest_point_subset(const Eigen::MatrixXd& points, int budget,
                                       Rng& rng) {
  const int n = static_cast<int>(points.rows());
  std::vector<int> out{std::uniform_int_distribution<int>(0, n - 1)(rng)};
  Eigen::VectorXd dist = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  while (static_cast<int>(out.size()) < budget) {
    int last = out.back();
    for (int i = 0; i < n; ++i)
      dist[i] = std::min(dist[i], (points.row(i) - points.row(last)).squaredNorm());
    int best = 0;
    for (int i = 1; i < n; ++i)
      if (dist[i] > dist[best]) best = i;
    out.push_back(best);
  }
  return out;
}

}  // namespace poex
