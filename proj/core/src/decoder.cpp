#include "poex/decoder.hpp"

#include <cmath>

namespace poex {

using ad::Mat;
using ad::Var;

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
// predicted std is floored at ~1e-3 via the log-var lower clamp
constexpr double kLogVarLo = -13.8, kLogVarHi = 10.0;
constexpr double kScaleClamp = 3.0;

}  // namespace

Decoder::Decoder(std::string prefix, DecoderKind kind, int d, int hidden,
                 int n_couplings)
    : prefix_(std::move(prefix)),
      kind_(kind),
      d_(d),
      hidden_(hidden),
      n_couplings_(kind == DecoderKind::coupling ? n_couplings : 0) {}

Eigen::MatrixXd Decoder::pattern(int k) const {
  Mat p = Mat::Zero(1, d_);
  for (int j = 0; j < d_; ++j)
    if (j % 2 == k % 2) p(0, j) = 1.0;
  return p;
}

Var Decoder::base_params(NetCtx& c, Var ctx_rows) const {
  Var st = mlp(c, prefix_ + ".base", ctx_rows, hidden_, 2 * d_);
  Var mean = ad::slice_cols(c.tape, st, 0, d_);
  Var lv = ad::clamp_soft(c.tape, ad::slice_cols(c.tape, st, d_, d_), kLogVarLo,
                          kLogVarHi);
  return ad::concat_cols(c.tape, {mean, lv});
}

Var Decoder::log_prob_rows(NetCtx& c, const Eigen::MatrixXd& y_rows,
                           Var ctx_rows, const Eigen::MatrixXi& query) const {
  ad::Tape& t = c.tape;
  const int N = static_cast<int>(y_rows.rows());
  ad::check(y_rows.cols() == d_ && query.rows() == N && query.cols() == d_,
            "decoder: shape mismatch");
  ad::check(ctx_rows->val.rows() == N, "decoder: ctx row mismatch");
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < d_; ++j)
      if (query(i, j) && !std::isfinite(y_rows(i, j)))
        throw std::invalid_argument("decoder: non-finite query value");

  const Mat Q = query.cast<double>();
  // scrub off-query inputs so only x_u on query dims can matter
  Var z = t.leaf(y_rows.cwiseProduct(Q));
  Var logdet = t.leaf(Mat::Zero(N, 1));

  for (int k = 0; k < n_couplings_; ++k) {
    const Mat p = pattern(k);
    // gate: couple a row only if it has conditioning query dims off-pattern
    Mat T = Mat::Zero(N, d_);
    Mat cond_mask = Mat::Zero(N, d_);
    for (int i = 0; i < N; ++i) {
      double n_cond = 0;
      for (int j = 0; j < d_; ++j)
        if (query(i, j) && p(0, j) == 0.0) {
          cond_mask(i, j) = 1.0;
          n_cond += 1.0;
        }
      if (n_cond > 0)
        for (int j = 0; j < d_; ++j)
          if (query(i, j) && p(0, j) == 1.0) T(i, j) = 1.0;
    }
    Var net_in = ad::concat_cols(t, {ad::mul_const(t, z, cond_mask), ctx_rows});
    Var st = mlp(c, prefix_ + ".cpl" + std::to_string(k), net_in, hidden_,
                 2 * d_);
    Var s = ad::mul_const(
        t,
        ad::clamp_soft(t, ad::slice_cols(t, st, 0, d_), -kScaleClamp, kScaleClamp),
        T);
    Var shift = ad::mul_const(t, ad::slice_cols(t, st, d_, d_), T);
    // z' = z*exp(s) + shift on transformed dims; s = 0 elsewhere
    z = ad::add(t, ad::mul(t, z, ad::exp_(t, s)), shift);
    logdet = ad::add(t, logdet, ad::sum_cols(t, s));
  }

  Var bp = base_params(c, ctx_rows);
  Var mean = ad::slice_cols(t, bp, 0, d_);
  Var lv = ad::slice_cols(t, bp, d_, d_);
  Var diff = ad::sub(t, z, mean);
  Var quad = ad::mul(t, ad::square(t, diff), ad::exp_(t, ad::scale(t, lv, -1.0)));
  Var per_dim = ad::scale(t, ad::add(t, ad::add_const(t, lv, kLog2Pi), quad), -0.5);
  Var base_ll = ad::sum_cols(t, ad::mul_const(t, per_dim, Q));
  return ad::add(t, base_ll, logdet);
}

Eigen::MatrixXd Decoder::sample(NetCtx& c, Var ctx_rows,
                                const Eigen::MatrixXd& frozen_rows,
                                const Eigen::MatrixXi& query, Rng& rng,
                                bool mean_only,
                                Eigen::VectorXd* log_prob_out) const {
  const int N = static_cast<int>(ctx_rows->val.rows());
  const Mat Q = query.cast<double>();
  Var bp = base_params(c, ctx_rows);
  Mat z = Mat::Zero(N, d_);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < d_; ++j) {
      if (!query(i, j)) continue;
      double mu = bp->val(i, j), lv = bp->val(i, d_ + j);
      z(i, j) = mu + (mean_only ? 0.0 : std::exp(0.5 * lv) * rand_normal(rng));
    }

  // invert couplings in reverse order (base -> data)
  for (int k = n_couplings_ - 1; k >= 0; --k) {
    const Mat p = pattern(k);
    Mat cond_mask = Mat::Zero(N, d_);
    Mat T = Mat::Zero(N, d_);
    for (int i = 0; i < N; ++i) {
      double n_cond = 0;
      for (int j = 0; j < d_; ++j)
        if (query(i, j) && p(0, j) == 0.0) {
          cond_mask(i, j) = 1.0;
          n_cond += 1.0;
        }
      if (n_cond > 0)
        for (int j = 0; j < d_; ++j)
          if (query(i, j) && p(0, j) == 1.0) T(i, j) = 1.0;
    }
    Var net_in = ad::concat_cols(
        c.tape, {c.tape.leaf(z.cwiseProduct(cond_mask)), ctx_rows});
    Var st = mlp(c, prefix_ + ".cpl" + std::to_string(k), net_in, hidden_,
                 2 * d_);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < d_; ++j)
        if (T(i, j) == 1.0) {
          double s = kScaleClamp * std::tanh(st->val(i, j) / kScaleClamp);
          z(i, j) = (z(i, j) - st->val(i, d_ + j)) * std::exp(-s);
        }
  }

  if (log_prob_out) {
    NetCtx sub = c;
    sub.init_rng = nullptr;
    Var ll = log_prob_rows(sub, z, ctx_rows, query);
    *log_prob_out = ll->val.col(0);
  }

  // splice sampled query values into the frozen context rows
  Mat out = frozen_rows;
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < d_; ++j)
      if (query(i, j)) out(i, j) = z(i, j);
  return out;
}

}  // namespace poex
