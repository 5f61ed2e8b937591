#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace poex::ad {

using Mat = Eigen::MatrixXd;

struct Node;
using Var = Node*;

// One entry of the reverse-mode tape. Values and adjoints are dense
// double-precision matrices; scalars are 1x1.
struct Node {
  Mat val;
  Mat grad;
  bool needs_grad = false;
  std::function<void()> backward;  // accumulates into parents' grads
};

// Owns all nodes of one computation graph. Build forward, then call
// backward(root) once. Single-threaded by construction.
class Tape {
 public:
  Var leaf(Mat v, bool needs_grad = false) {
    return push(std::move(v), needs_grad, {});
  }

  Var push(Mat v, bool needs_grad, std::function<void()> back) {
    nodes_.push_back(std::make_unique<Node>());
    Node& n = *nodes_.back();
    n.val = std::move(v);
    n.needs_grad = needs_grad;
    n.backward = std::move(back);
    return &n;
  }

  // Seeds d(root)/d(root) = 1 (root must be 1x1) and sweeps in reverse.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::unique_ptr<Node>> nodes_;
};

inline void ensure_grad(Var v) {
  if (v->grad.size() == 0) v->grad = Mat::Zero(v->val.rows(), v->val.cols());
}

// ---- arithmetic ----
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);  // elementwise
Var scale(Tape& t, Var a, double c);
Var add_const(Tape& t, Var a, double c);
Var mul_const(Tape& t, Var a, const Mat& c);  // elementwise by constant
Var matmul(Tape& t, Var a, Var b);
Var transpose(Tape& t, Var a);
Var add_rowvec(Tape& t, Var a, Var row);    // broadcast 1xC over rows
Var repeat_rows(Tape& t, Var row, int n);   // tile 1xC to nxC
Var div(Tape& t, Var a, Var b);             // elementwise

// ---- elementwise nonlinearities (smooth unless noted) ----
Var tanh_(Tape& t, Var a);
Var exp_(Tape& t, Var a);
Var log_(Tape& t, Var a);
Var square(Tape& t, Var a);
Var leaky_relu(Tape& t, Var a, double slope);  // kink at 0
Var clamp_soft(Tape& t, Var a, double lo, double hi);  // smooth via scaled tanh

// ---- reductions / shape ----
Var sum(Tape& t, Var a);                 // -> 1x1
Var sum_rows(Tape& t, Var a);            // colwise sum -> 1xC
Var sum_cols(Tape& t, Var a);            // rowwise sum -> Nx1
Var mean_rows(Tape& t, Var a);           // -> 1xC
Var slice_cols(Tape& t, Var a, int j0, int n);
Var slice_rows(Tape& t, Var a, int i0, int n);
Var concat_cols(Tape& t, const std::vector<Var>& parts);
Var concat_rows(Tape& t, const std::vector<Var>& parts);
Var gather_rows(Tape& t, Var a, const std::vector<int>& idx);

// ---- structured ----
Var softmax_rows(Tape& t, Var a);
Var layer_norm_rows(Tape& t, Var a, double eps = 1e-5);
Var logsumexp_rows(Tape& t, Var a);      // -> Nx1

// ---- image ops (row-major HxWxC flattened per matrix row) ----
// im2col for 3x3 same-padding conv: (N)x(H*W*C) -> (N*H*W)x(9*C)
Var im2col3x3(Tape& t, Var a, int H, int W, int C);
// 2x2 average pool: (N)x(H*W*C) -> (N)x((H/2)*(W/2)*C)
Var avgpool2x2(Tape& t, Var a, int H, int W, int C);
// nearest-neighbor 2x upsample, inverse shape of avgpool2x2
Var upsample2x2(Tape& t, Var a, int H, int W, int C);
// reshape (no copy semantics needed at this scale; copies are fine)
Var reshape(Tape& t, Var a, int rows, int cols);

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace poex::ad
