#include "poex/oracle.hpp"

#include <cmath>
#include <stdexcept>

namespace poex {

void DiscreteMixtureModel::validate() const {
  if (weights.size() < 1 || probs.rows() != weights.size() || probs.cols() < 1)
    throw std::invalid_argument("mixture shape invalid");
  if (std::abs(weights.sum() - 1.0) > 1e-12 || (weights.array() <= 0).any())
    throw std::invalid_argument("weights must be positive and sum to 1");
  if ((probs.array() <= 0).any() || (probs.array() >= 1).any())
    throw std::invalid_argument("Bernoulli probabilities must lie in (0,1)");
}

DiscreteMixtureModel DiscreteMixtureModel::random(int k_mix, int d, Rng& rng) {
  DiscreteMixtureModel dm;
  dm.weights.resize(k_mix);
  for (int k = 0; k < k_mix; ++k) dm.weights[k] = 0.1 + rand_uniform(rng);
  dm.weights /= dm.weights.sum();
  dm.probs.resize(k_mix, d);
  for (int k = 0; k < k_mix; ++k)
    for (int j = 0; j < d; ++j) dm.probs(k, j) = 0.05 + 0.9 * rand_uniform(rng);
  dm.validate();
  return dm;
}

double DiscreteMixtureModel::masked_loglik(const Eigen::VectorXi& values,
                                           const Eigen::VectorXi& mask,
                                           int k) const {
  double ll = 0;
  for (int j = 0; j < dim(); ++j) {
    if (!mask[j]) continue;
    ll += std::log(values[j] ? probs(k, j) : 1.0 - probs(k, j));
  }
  return ll;
}

namespace {

Eigen::VectorXi binary_values(const MaskedElement& e) {
  Eigen::VectorXi v(e.values.size());
  for (Eigen::Index j = 0; j < e.values.size(); ++j)
    v[j] = e.values[j] > 0.5 ? 1 : 0;
  return v;
}

}  // namespace

double DiscreteMixtureModel::observed_prob(const MaskedSet& s) const {
  double total = 0;
  for (int k = 0; k < k_mix(); ++k) {
    double ll = 0;
    for (const auto& e : s.elements)
      ll += masked_loglik(binary_values(e), e.mask.obs, k);
    total += weights[k] * std::exp(ll);
  }
  return total;
}

double DiscreteMixtureModel::conditional_prob_full(
    const MaskedSet& s, int element, const std::vector<int>& observed_elements) const {
  // p(x_element (all dims) | selected elements fully observed)
  double num = 0, den = 0;
  const Eigen::VectorXi full = Eigen::VectorXi::Ones(dim());
  for (int k = 0; k < k_mix(); ++k) {
    double ll_obs = 0;
    for (int i : observed_elements)
      ll_obs += masked_loglik(binary_values(s.elements[i]), full, k);
    double p_obs = weights[k] * std::exp(ll_obs);
    den += p_obs;
    num += p_obs * std::exp(masked_loglik(binary_values(s.elements[element]), full, k));
  }
  return num / den;
}

std::pair<double, double> theorem1_oracle(const DiscreteMixtureModel& dm,
                                          const MaskedSet& s) {
  dm.validate();
  s.validate();
  const int d = dm.dim(), n = s.size(), K = dm.k_mix();
  if (d > 12 || n > 6 || K > 8)
    throw std::invalid_argument("oracle sizes exceed enumeration budget");
  if (s.d != d) throw std::invalid_argument("dimension mismatch");

  // lhs: p(x_u | x_o) = p(x_o, x_u) / p(x_o), each evaluated by literally
  // enumerating every completion of the dims outside o_i and u_i.
  auto enumerated_prob = [&](bool include_query) {
    double total = 0;
    for (int k = 0; k < K; ++k) {
      double prod = 1.0;
      for (const auto& e : s.elements) {
        Eigen::VectorXi v = binary_values(e);
        std::vector<int> free_dims;
        for (int j = 0; j < d; ++j) {
          bool fixed = e.mask.obs[j] || (include_query && e.mask.query[j]);
          if (!fixed) free_dims.push_back(j);
        }
        double elem_sum = 0;
        const int n_comp = 1 << free_dims.size();
        for (int c = 0; c < n_comp; ++c) {
          Eigen::VectorXi w = v;
          for (std::size_t b = 0; b < free_dims.size(); ++b)
            w[free_dims[b]] = (c >> b) & 1;
          elem_sum += std::exp(
              dm.masked_loglik(w, Eigen::VectorXi::Ones(d), k));
        }
        prod *= elem_sum;
      }
      total += dm.weights[k] * prod;
    }
    return total;
  };
  const double lhs = enumerated_prob(true) / enumerated_prob(false);

  // rhs: sum_k [prod_i p(x_i^(u_i) | x_i^(o_i), theta=k)] p(theta=k | x_o),
  // with the inner conditionals taken from the factorized component form.
  Eigen::VectorXd post(K);
  for (int k = 0; k < K; ++k) {
    double ll = 0;
    for (const auto& e : s.elements)
      ll += dm.masked_loglik(binary_values(e), e.mask.obs, k);
    post[k] = dm.weights[k] * std::exp(ll);
  }
  post /= post.sum();
  double rhs = 0;
  for (int k = 0; k < K; ++k) {
    double prod = 1.0;
    for (const auto& e : s.elements)
      prod *= std::exp(dm.masked_loglik(binary_values(e), e.mask.query, k));
    rhs += post[k] * prod;
  }
  return {lhs, rhs};
}

MaskedSet random_binary_set(int n, int d, const DiscreteMixtureModel& dm,
                            Rng& rng) {
  std::discrete_distribution<int> comp(dm.weights.data(),
                                       dm.weights.data() + dm.weights.size());
  MaskedSet s;
  s.d = d;
  for (int i = 0; i < n; ++i) {
    const int k = comp(rng);
    MaskedElement e;
    e.values.resize(d);
    e.mask.obs = Eigen::VectorXi::Zero(d);
    e.mask.query = Eigen::VectorXi::Zero(d);
    for (int j = 0; j < d; ++j) {
      e.values[j] = rand_uniform(rng) < dm.probs(k, j) ? 1.0 : 0.0;
      double u = rand_uniform(rng);
      if (u < 0.4) e.mask.obs[j] = 1;
      else if (u < 0.8) e.mask.query[j] = 1;
      // else: neither observed nor queried
    }
    s.elements.push_back(std::move(e));
  }
  s.validate();
  return s;
}

}  // namespace poex
