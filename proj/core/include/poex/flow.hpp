#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "poex/nets.hpp"

namespace poex {

// Conditional prior p(theta | x_o): a normalizing flow whose base Gaussian
// and coupling nets are conditioned on the invariant set embedding. The
// normalizing direction theta -> eps is the differentiable path; sampling
// inverts it without gradients.
//
// Per block, normalizing order: permute, affine coupling, leaky nonlinearity,
// PLU-factored invertible linear.
class LatentFlow {
 public:
  LatentFlow(std::string prefix, int latent_dim, int n_blocks, int hidden,
             std::uint64_t perm_seed, double slope = 0.01);

  // Log-density of each row of theta (S x L) under p(. | cond). cond is 1xE.
  ad::Var log_prob(NetCtx& c, ad::Var theta_rows, ad::Var cond) const;

  // Draws theta ~ p(. | cond); returns the sample and its exact log-density.
  Eigen::RowVectorXd sample(NetCtx& c, const Eigen::RowVectorXd& cond, Rng& rng,
                            double* log_prob_out = nullptr) const;

  // theta = T(eps; cond) for a fixed base draw (used by quadrature).
  Eigen::RowVectorXd push_forward(NetCtx& c, const Eigen::RowVectorXd& eps,
                                  const Eigen::RowVectorXd& cond) const;

  // Base Gaussian parameters as plain values (no gradient path).
  void base_params(NetCtx& c, const Eigen::RowVectorXd& cond,
                   Eigen::RowVectorXd& mean, Eigen::RowVectorXd& log_var) const;

  int latent_dim() const { return latent_dim_; }
  int blocks() const { return n_blocks_; }

 private:
  std::string prefix_;
  int latent_dim_, n_blocks_, hidden_;
  double slope_;
  std::vector<std::vector<int>> perms_;  // fixed, drawn once from perm_seed

  ad::Var coupling_forward(NetCtx& c, int block, ad::Var x, ad::Var cond_rows,
                           ad::Var* logdet_rows) const;
};

// Gaussian entropy: H(q) = sum_j 0.5*(log(2*pi*e) + log_var_j).
ad::Var gaussian_entropy(ad::Tape& t, const GaussianParamsVar& q);

// Monte-Carlo KL(q || p) with reparameterized samples: -H(q) - mean_s log p(theta_s).
// eps is a fixed S x L standard-normal draw supplied by the caller.
ad::Var kl_monte_carlo(NetCtx& c, const GaussianParamsVar& q, const LatentFlow& prior,
                       ad::Var cond, const Eigen::MatrixXd& eps);

// Reparameterized draws from q as tape values: theta = mean + exp(log_var/2)*eps.
ad::Var reparam_sample(ad::Tape& t, const GaussianParamsVar& q,
                       const Eigen::MatrixXd& eps);

}  // namespace poex
