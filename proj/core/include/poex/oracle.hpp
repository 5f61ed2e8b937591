#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "poex/data.hpp"

namespace poex {

// Finite exchangeable mixture over binary vectors: p(theta = k) mixture
// weights and per-component per-dimension Bernoulli success probabilities.
// Small enough for exhaustive enumeration; serves as the brute-force oracle
// for the conditional factorization the whole model rests on.
struct DiscreteMixtureModel {
  Eigen::VectorXd weights;  // K_mix, sums to 1
  Eigen::MatrixXd probs;    // K_mix x d, entries in (0, 1)

  int k_mix() const { return static_cast<int>(weights.size()); }
  int dim() const { return static_cast<int>(probs.cols()); }
  void validate() const;

  static DiscreteMixtureModel random(int k_mix, int d, Rng& rng);

  // log p over the dims flagged in `mask` of a binary value vector,
  // conditioned on component k (independence within a component).
  double masked_loglik(const Eigen::VectorXi& values, const Eigen::VectorXi& mask,
                       int k) const;

  // p(x_o) for a whole masked set, marginalizing the component.
  double observed_prob(const MaskedSet& s) const;

  // Exact p(x_u | x_o) for element i's full feature vector given a selection
  // of fully observed elements (used by compression oracles).
  double conditional_prob_full(const MaskedSet& s, int element,
                               const std::vector<int>& observed_elements) const;
};

// Evaluates both sides of the conditional decomposition on a binary set:
// lhs = p(x_u | x_o) via exhaustive enumeration of components and all
// completions of the never-seen dims; rhs = sum_k [prod_i p(x_i^(u) | theta=k)]
// p(theta = k | x_o) using the factorized per-component form directly.
// Requires d <= 12, N <= 6, K_mix <= 8.
std::pair<double, double> theorem1_oracle(const DiscreteMixtureModel& dm,
                                          const MaskedSet& s);

// Random binary masked set for oracle sweeps.
MaskedSet random_binary_set(int n, int d, const DiscreteMixtureModel& dm, Rng& rng);

}  // namespace poex
