#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "poex/rng.hpp"
#include "poex/tape.hpp"

namespace poex {

// Named parameter tensors plus optimizer state. Keys are stable strings so
// checkpoints are portable across builds.
class ParamStore {
 public:
  // Registers (or returns existing) parameter of the given shape.
  Eigen::MatrixXd& create(const std::string& name, int rows, int cols,
                          double init_scale, Rng& rng);
  Eigen::MatrixXd& create_zeros(const std::string& name, int rows, int cols);

  bool has(const std::string& name) const { return values_.count(name) > 0; }
  Eigen::MatrixXd& value(const std::string& name);
  const Eigen::MatrixXd& value(const std::string& name) const;
  Eigen::MatrixXd& grad(const std::string& name);

  // Builds a tape leaf bound to this parameter; grads flow back via
  // accumulate_grads(tape) after tape.backward().
  ad::Var leaf(ad::Tape& t, const std::string& name);

  void zero_grads();
  // Copies the given tape's leaf adjoints into the store's grad buffers.
  // Must be called while the tape is alive; leaves of other tapes are kept.
  void accumulate_grads(const ad::Tape& t);
  void scale_grads(double c);
  double grad_norm() const;

  // One Adam ascent step (gradient ascent: params += update on +grad
  // is handled by the caller negating the loss; here we descend on grad).
  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8, double clip_norm = 10.0);

  std::vector<std::string> names() const;
  long step_count() const { return adam_step_; }
  void set_step_count(long s) { adam_step_ = s; }

  std::map<std::string, Eigen::MatrixXd>& values() { return values_; }
  const std::map<std::string, Eigen::MatrixXd>& values() const { return values_; }
  std::map<std::string, Eigen::MatrixXd>& adam_m() { return m_; }
  std::map<std::string, Eigen::MatrixXd>& adam_v() { return v_; }

 private:
  struct LeafRef {
    const ad::Tape* tape;
    std::string name;
    ad::Var var;
  };
  std::map<std::string, Eigen::MatrixXd> values_, grads_, m_, v_;
  std::vector<LeafRef> live_leaves_;
  long adam_step_ = 0;
};

}  // namespace poex
