#include "poex/params.hpp"

#include <cmath>
#include <stdexcept>

namespace poex {

Eigen::MatrixXd& ParamStore::create(const std::string& name, int rows, int cols,
                                    double init_scale, Rng& rng) {
  auto it = values_.find(name);
  if (it != values_.end()) return it->second;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      m(i, j) = init_scale * rand_normal(rng);
  return values_.emplace(name, std::move(m)).first->second;
}

Eigen::MatrixXd& ParamStore::create_zeros(const std::string& name, int rows,
                                          int cols) {
  auto it = values_.find(name);
  if (it != values_.end()) return it->second;
  return values_.emplace(name, Eigen::MatrixXd::Zero(rows, cols)).first->second;
}

Eigen::MatrixXd& ParamStore::value(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::out_of_range("no parameter: " + name);
  return it->second;
}

const Eigen::MatrixXd& ParamStore::value(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::out_of_range("no parameter: " + name);
  return it->second;
}

Eigen::MatrixXd& ParamStore::grad(const std::string& name) {
  auto it = grads_.find(name);
  if (it == grads_.end()) {
    const auto& v = value(name);
    it = grads_.emplace(name, Eigen::MatrixXd::Zero(v.rows(), v.cols())).first;
  }
  return it->second;
}

ad::Var ParamStore::leaf(ad::Tape& t, const std::string& name) {
  ad::Var v = t.leaf(value(name), true);
  // Gradients are consumed one tape at a time, so refs left over from other
  // tapes are stale; dropping them here keeps gradient-free evaluation loops
  // (which never call zero_grads) from accumulating refs without bound.
  if (!live_leaves_.empty() && live_leaves_.back().tape != &t) live_leaves_.clear();
  live_leaves_.push_back({&t, name, v});
  return v;
}

void ParamStore::zero_grads() {
  grads_.clear();
  live_leaves_.clear();
}

void ParamStore::accumulate_grads(const ad::Tape& t) {
  std::vector<LeafRef> keep;
  keep.reserve(live_leaves_.size());
  for (auto& ref : live_leaves_) {
    if (ref.tape != &t) {
      keep.push_back(ref);
      continue;
    }
    if (ref.var->grad.size() != 0) grad(ref.name) += ref.var->grad;
  }
  live_leaves_ = std::move(keep);
}

void ParamStore::scale_grads(double c) {
  for (auto& [name, g] : grads_) g *= c;
}

double ParamStore::grad_norm() const {
  double s = 0;
  for (const auto& [name, g] : grads_) s += g.squaredNorm();
  return std::sqrt(s);
}

void ParamStore::adam_step(double lr, double beta1, double beta2, double eps,
                           double clip_norm) {
  double gn = grad_norm();
  double scale = (clip_norm > 0 && gn > clip_norm) ? clip_norm / gn : 1.0;
  ++adam_step_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam_step_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam_step_));
  for (auto& [name, g0] : grads_) {
    Eigen::MatrixXd g = g0 * scale;
    auto& p = value(name);
    auto mi = m_.find(name);
    if (mi == m_.end())
      mi = m_.emplace(name, Eigen::MatrixXd::Zero(p.rows(), p.cols())).first;
    auto vi = v_.find(name);
    if (vi == v_.end())
      vi = v_.emplace(name, Eigen::MatrixXd::Zero(p.rows(), p.cols())).first;
    mi->second = beta1 * mi->second + (1.0 - beta1) * g;
    vi->second = beta2 * vi->second.array() + (1.0 - beta2) * g.array().square();
    Eigen::ArrayXXd mhat = mi->second.array() / bc1;
    Eigen::ArrayXXd vhat = vi->second.array() / bc2;
    p.array() -= lr * mhat / (vhat.sqrt() + eps);
  }
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(values_.size());
  for (const auto& [k, v] : values_) out.push_back(k);
  return out;
}

}  // namespace poex
