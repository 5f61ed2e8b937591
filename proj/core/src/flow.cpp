#include "poex/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace poex {

using ad::Mat;
using ad::Var;

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Per-row Gaussian log-density with a shared 1xL (mean, log_var) row.
Var gaussian_ll_rows(ad::Tape& t, Var x, Var mean, Var log_var) {
  const int S = static_cast<int>(x->val.rows());
  Var mu = ad::repeat_rows(t, mean, S);
  Var lv = ad::repeat_rows(t, log_var, S);
  Var diff = ad::sub(t, x, mu);
  Var quad = ad::mul(t, ad::square(t, diff), ad::exp_(t, ad::scale(t, lv, -1.0)));
  Var per_dim = ad::scale(t, ad::add(t, ad::add_const(t, lv, kLog2Pi), quad), -0.5);
  return ad::sum_cols(t, per_dim);
}

Var broadcast_scalar(ad::Tape& t, Var scalar, int rows) {
  Var ones = t.leaf(Mat::Ones(rows, 1));
  return ad::matmul(t, ones, scalar);
}

}  // namespace

LatentFlow::LatentFlow(std::string prefix, int latent_dim, int n_blocks,
                       int hidden, std::uint64_t perm_seed, double slope)
    : prefix_(std::move(prefix)),
      latent_dim_(latent_dim),
      n_blocks_(n_blocks),
      hidden_(hidden),
      slope_(slope) {
  Rng rng = make_rng(combine_seed(perm_seed, 0x9e77ULL));
  for (int b = 0; b < n_blocks_; ++b) {
    std::vector<int> p(latent_dim_);
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    perms_.push_back(std::move(p));
  }
}

Var LatentFlow::coupling_forward(NetCtx& c, int block, Var x, Var cond_rows,
                                 Var* logdet_rows) const {
  const int h1 = (latent_dim_ + 1) / 2, h2 = latent_dim_ - h1;
  if (h2 == 0) return x;  // nothing to couple at L = 1
  ad::Tape& t = c.tape;
  Var first = ad::slice_cols(t, x, 0, h1);
  Var second = ad::slice_cols(t, x, h1, h2);
  Var net_in = ad::concat_cols(t, {first, cond_rows});
  Var st = mlp(c, prefix_ + ".b" + std::to_string(block) + ".cpl", net_in,
               hidden_, 2 * h2);
  Var s = ad::clamp_soft(t, ad::slice_cols(t, st, 0, h2), -3.0, 3.0);
  Var shift = ad::slice_cols(t, st, h2, h2);
  Var second_out = ad::add(t, ad::mul(t, second, ad::exp_(t, s)), shift);
  *logdet_rows = ad::add(t, *logdet_rows, ad::sum_cols(t, s));
  return ad::concat_cols(t, {first, second_out});
}

Var LatentFlow::log_prob(NetCtx& c, Var theta_rows, Var cond) const {
  ad::Tape& t = c.tape;
  const int S = static_cast<int>(theta_rows->val.rows());
  const int L = latent_dim_;
  ad::check(theta_rows->val.cols() == L, "flow: latent dim mismatch");
  for (int i = 0; i < S; ++i)
    for (int j = 0; j < L; ++j)
      if (!std::isfinite(theta_rows->val(i, j)))
        throw std::invalid_argument("flow_log_prob: non-finite theta");

  Var cond_rows = ad::repeat_rows(t, cond, S);
  Var x = theta_rows;
  Var logdet = t.leaf(Mat::Zero(S, 1));

  const Mat strict_lower =
      Mat(Eigen::MatrixXd::Ones(L, L).triangularView<Eigen::StrictlyLower>());
  const Mat strict_upper =
      Mat(Eigen::MatrixXd::Ones(L, L).triangularView<Eigen::StrictlyUpper>());
  const Mat diag_mask = Mat(Eigen::MatrixXd::Identity(L, L));

  for (int b = 0; b < n_blocks_; ++b) {
    const std::string bp = prefix_ + ".b" + std::to_string(b);
    // fixed permutation
    Mat P = Mat::Zero(L, L);
    for (int j = 0; j < L; ++j) P(j, perms_[b][j]) = 1.0;
    x = ad::matmul(t, x, t.leaf(P));
    // conditional affine coupling
    x = coupling_forward(c, b, x, cond_rows, &logdet);
    // leaky nonlinearity; its log-det is piecewise constant in the input
    Mat ld_leaky = Mat::Zero(S, 1);
    const double logslope = std::log(slope_);
    for (int i = 0; i < S; ++i)
      for (int j = 0; j < L; ++j)
        if (x->val(i, j) < 0) ld_leaky(i, 0) += logslope;
    x = ad::leaky_relu(t, x, slope_);
    logdet = ad::add(t, logdet, t.leaf(ld_leaky));
    // PLU-style invertible linear: unit-lower L times upper with exp diagonal
    if (!c.ps.has(bp + ".L")) {
      if (!c.init_rng) throw std::logic_error("flow params missing: " + bp);
      c.ps.create(bp + ".L", L, L, 0.05, *c.init_rng);
      c.ps.create(bp + ".U", L, L, 0.05, *c.init_rng);
    }
    Var Lp = c.ps.leaf(t, bp + ".L");
    Var Up = c.ps.leaf(t, bp + ".U");
    Var Lmat = ad::add(t, ad::mul_const(t, Lp, strict_lower), t.leaf(diag_mask));
    Var Umat = ad::add(t, ad::mul_const(t, Up, strict_upper),
                       ad::mul_const(t, ad::exp_(t, Up), diag_mask));
    x = ad::matmul(t, x, ad::matmul(t, Lmat, Umat));
    Var ld_lin = ad::sum(t, ad::mul_const(t, Up, diag_mask));
    logdet = ad::add(t, logdet, broadcast_scalar(t, ld_lin, S));
  }

  GaussianParamsVar base =
      gaussian_head(c, prefix_ + ".base", cond, latent_dim_);
  Var base_ll = gaussian_ll_rows(t, x, base.mean, base.log_var);
  return ad::add(t, base_ll, logdet);
}

void LatentFlow::base_params(NetCtx& c, const Eigen::RowVectorXd& cond,
                             Eigen::RowVectorXd& mean,
                             Eigen::RowVectorXd& log_var) const {
  Var cv = c.tape.leaf(cond);
  GaussianParamsVar base = gaussian_head(c, prefix_ + ".base", cv, latent_dim_);
  mean = base.mean->val.row(0);
  log_var = base.log_var->val.row(0);
}

Eigen::RowVectorXd LatentFlow::push_forward(NetCtx& c,
                                            const Eigen::RowVectorXd& eps,
                                            const Eigen::RowVectorXd& cond) const {
  const int L = latent_dim_;
  Eigen::RowVectorXd x = eps;
  const int h1 = (L + 1) / 2, h2 = L - h1;
  // invert blocks in reverse of the normalizing order
  for (int b = n_blocks_ - 1; b >= 0; --b) {
    const std::string bp = prefix_ + ".b" + std::to_string(b);
    // inverse linear: solve y = x * (L U)
    const Mat& Lp = c.ps.value(bp + ".L");
    const Mat& Up = c.ps.value(bp + ".U");
    Mat Lmat = Mat(Lp.triangularView<Eigen::StrictlyLower>()) + Mat::Identity(L, L);
    Mat Umat = Mat(Up.triangularView<Eigen::StrictlyUpper>());
    Umat.diagonal() = Up.diagonal().array().exp();
    Mat W = Lmat * Umat;
    x = W.transpose().partialPivLu().solve(x.transpose()).transpose();
    // inverse leaky
    for (int j = 0; j < L; ++j)
      if (x[j] < 0) x[j] /= slope_;
    // inverse coupling
    if (h2 > 0) {
      Var net_in = c.tape.leaf(
          (Eigen::RowVectorXd(h1 + cond.size()) << x.head(h1), cond).finished());
      Var st = mlp(c, bp + ".cpl", net_in, hidden_, 2 * h2);
      Eigen::RowVectorXd s_raw = st->val.row(0).head(h2);
      Eigen::RowVectorXd shift = st->val.row(0).tail(h2);
      for (int j = 0; j < h2; ++j) {
        double s = 3.0 * std::tanh(s_raw[j] / 3.0);
        x[h1 + j] = (x[h1 + j] - shift[j]) * std::exp(-s);
      }
    }
    // inverse permutation
    Eigen::RowVectorXd y(L);
    for (int j = 0; j < L; ++j) y[perms_[b][j]] = x[j];
    x = y;
  }
  return x;
}

Eigen::RowVectorXd LatentFlow::sample(NetCtx& c, const Eigen::RowVectorXd& cond,
                                      Rng& rng, double* log_prob_out) const {
  Eigen::RowVectorXd mean, log_var;
  base_params(c, cond, mean, log_var);
  Eigen::RowVectorXd eps(latent_dim_);
  for (int j = 0; j < latent_dim_; ++j)
    eps[j] = mean[j] + std::exp(0.5 * log_var[j]) * rand_normal(rng);
  Eigen::RowVectorXd theta = push_forward(c, eps, cond);
  if (log_prob_out) {
    Var th = c.tape.leaf(theta);
    Var cv = c.tape.leaf(cond);
    NetCtx sub = c;
    sub.init_rng = nullptr;
    *log_prob_out = log_prob(sub, th, cv)->val(0, 0);
  }
  return theta;
}

Var gaussian_entropy(ad::Tape& t, const GaussianParamsVar& q) {
  Var per_dim = ad::scale(t, ad::add_const(t, q.log_var, kLog2Pi + 1.0), 0.5);
  return ad::sum(t, per_dim);
}

Var reparam_sample(ad::Tape& t, const GaussianParamsVar& q,
                   const Eigen::MatrixXd& eps) {
  const int S = static_cast<int>(eps.rows());
  Var mu = ad::repeat_rows(t, q.mean, S);
  Var std_rows = ad::repeat_rows(t, ad::exp_(t, ad::scale(t, q.log_var, 0.5)), S);
  return ad::add(t, mu, ad::mul(t, std_rows, t.leaf(eps)));
}

Var kl_monte_carlo(NetCtx& c, const GaussianParamsVar& q, const LatentFlow& prior,
                   Var cond, const Eigen::MatrixXd& eps) {
  ad::Tape& t = c.tape;
  Var theta = reparam_sample(t, q, eps);
  Var lp = prior.log_prob(c, theta, cond);
  Var mean_lp = ad::scale(t, ad::sum(t, lp), 1.0 / static_cast<double>(eps.rows()));
  Var neg_h = ad::scale(t, gaussian_entropy(t, q), -1.0);
  return ad::sub(t, neg_h, mean_lp);
}

}  // namespace poex
