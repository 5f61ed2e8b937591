#pragma once

#include <Eigen/Dense>
#include <string>

#include "poex/nets.hpp"

namespace poex {

enum class DecoderKind { gaussian, coupling };

// Arbitrary-conditional decoder p(x^(u) | x^(o), t, theta, zeta), evaluated
// for a whole set at once: each row is one element. Context rows carry the
// zero-imputed observed values, both masks, the index embedding, theta and
// zeta; the same parameters serve every obs/query split.
//
// The coupling variant is a conditional flow over the query coordinates:
// fixed alternating patterns pick the transformed half, the conditioner reads
// the query dims outside the pattern plus the context. A coupling is gated
// off for rows whose conditioning query set is empty, so a single query dim
// falls back to the conditional Gaussian base exactly. Non-query dims are
// never transformed or scored.
class Decoder {
 public:
  Decoder(std::string prefix, DecoderKind kind, int d, int hidden,
          int n_couplings = 4);

  // Per-element log p(x_u | ctx); y_rows holds query values (N x d, anything
  // off-query is ignored), ctx_rows is N x C. Returns N x 1. Rows with an
  // empty query mask score exactly 0.
  ad::Var log_prob_rows(NetCtx& c, const Eigen::MatrixXd& y_rows,
                        ad::Var ctx_rows, const Eigen::MatrixXi& query) const;

  // Draws query values per row. Rows keep their context values off-query.
  // mean_only = true pushes the base mean through the flow (no noise).
  Eigen::MatrixXd sample(NetCtx& c, ad::Var ctx_rows,
                         const Eigen::MatrixXd& frozen_rows,
                         const Eigen::MatrixXi& query, Rng& rng,
                         bool mean_only = false,
                         Eigen::VectorXd* log_prob_out = nullptr) const;

  DecoderKind kind() const { return kind_; }
  int dim() const { return d_; }

 private:
  std::string prefix_;
  DecoderKind kind_;
  int d_, hidden_, n_couplings_;

  Eigen::MatrixXd pattern(int k) const;  // 1 x d binary, alternating parity
  ad::Var base_params(NetCtx& c, ad::Var ctx_rows) const;  // N x 2d
};

}  // namespace poex
