#include "poex/tape.hpp"

#include <cmath>

namespace poex::ad {

void Tape::backward(Var root) {
  check(root->val.size() == 1, "backward root must be scalar");
  for (auto& n : nodes_) n->grad.resize(0, 0);
  ensure_grad(root);
  root->grad(0, 0) = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.backward && n.grad.size() != 0) n.backward();
  }
}

namespace {

bool same_shape(Var a, Var b) {
  return a->val.rows() == b->val.rows() && a->val.cols() == b->val.cols();
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
  check(same_shape(a, b), "add: shape mismatch");
  Var out = t.push(a->val + b->val, a->needs_grad || b->needs_grad, nullptr);
  out->backward = [a, b, out] {
    if (a->needs_grad) { ensure_grad(a); a->grad += out->grad; }
    if (b->needs_grad) { ensure_grad(b); b->grad += out->grad; }
  };
  return out;
}

Var sub(Tape& t, Var a, Var b) {
  check(same_shape(a, b), "sub: shape mismatch");
  Var out = t.push(a->val - b->val, a->needs_grad || b->needs_grad, nullptr);
  out->backward = [a, b, out] {
    if (a->needs_grad) { ensure_grad(a); a->grad += out->grad; }
    if (b->needs_grad) { ensure_grad(b); b->grad -= out->grad; }
  };
  return out;
}

Var mul(Tape& t, Var a, Var b) {
  check(same_shape(a, b), "mul: shape mismatch");
  Var out = t.push(a->val.cwiseProduct(b->val),
                   a->needs_grad || b->needs_grad, nullptr);
  out->backward = [a, b, out] {
    if (a->needs_grad) { ensure_grad(a); a->grad += out->grad.cwiseProduct(b->val); }
    if (b->needs_grad) { ensure_grad(b); b->grad += out->grad.cwiseProduct(a->val); }
  };
  return out;
}

Var div(Tape& t, Var a, Var b) {
  check(same_shape(a, b), "div: shape mismatch");
  Var out = t.push(a->val.cwiseQuotient(b->val),
                   a->needs_grad || b->needs_grad, nullptr);
  out->backward = [a, b, out] {
    if (a->needs_grad) { ensure_grad(a); a->grad += out->grad.cwiseQuotient(b->val); }
    if (b->needs_grad) {
      ensure_grad(b);
      b->grad -= out->grad.cwiseProduct(out->val).cwiseQuotient(b->val);
    }
  };
  return out;
}

Var scale(Tape& t, Var a, double c) {
  Var out = t.push(a->val * c, a->needs_grad, nullptr);
  out->backward = [a, c, out] {
    if (a->needs_grad) { ensure_grad(a); a->grad += out->grad * c; }
  };
  return out;
}

Var add_const(Tape& t, Var a, double c) {
  Var out = t.push(a->val.array() + c, a->needs_grad, nullptr);
  out->backward = [a, out] {
    if (a->needs_grad) { ensure_grad(a); a->grad += out->grad; }
  };
  return out;
}

Var mul_const(Tape& t, Var a, const Mat& c) {
  check(a->val.rows() == c.rows() && a->val.cols() == c.cols(),
        "mul_const: shape mismatch");
  Var out = t.push(a->val.cwiseProduct(c), a->needs_grad, nullptr);
  out->backward = [a, c, out] {
    if (a->needs_grad) { ensure_grad(a); a->grad += out->grad.cwiseProduct(c); }
  };
  return out;
}

Var matmul(Tape& t, Var a, Var b) {
  check(a->val.cols() == b->val.rows(), "matmul: inner dim mismatch");
  Var out = t.push(a->val * b->val, a->needs_grad || b->needs_grad, nullptr);
  out->backward = [a, b, out] {
    if (a->needs_grad) { ensure_grad(a); a->grad += out->grad * b->val.transpose(); }
    if (b->needs_grad) { ensure_grad(b); b->grad += a->val.transpose() * out->grad; }
  };
  return out;
}

Var transpose(Tape& t, Var a) {
  Var out = t.push(a->val.transpose(), a->needs_grad, nullptr);
  out->backward = [a, out] {
    if (a->needs_grad) { ensure_grad(a); a->grad += out->grad.transpose(); }
  };
  return out;
}

Var add_rowvec(Tape& t, Var a, Var row) {
  check(row->val.rows() == 1 && row->val.cols() == a->val.cols(),
        "add_rowvec: shape mismatch");
  Var out = t.push(a->val.rowwise() + row->val.row(0),
                   a->needs_grad || row->needs_grad, nullptr);
  out->backward = [a, row, out] {
    if (a->needs_grad) { ensure_grad(a); a->grad += out->grad; }
    if (row->needs_grad) {
      ensure_grad(row);
      row->grad += out->grad.colwise().sum();
    }
  };
  return out;
}

Var repeat_rows(Tape& t, Var row, int n) {
  check(row->val.rows() == 1, "repeat_rows: input must be 1xC");
  Mat v(n, row->val.cols());
  v.rowwise() = row->val.row(0);
  Var out = t.push(std::move(v), row->needs_grad, nullptr);
  out->backward = [row, out] {
    if (row->needs_grad) {
      ensure_grad(row);
      row->grad += out->grad.colwise().sum();
    }
  };
  return out;
}

Var tanh_(Tape& t, Var a) {
  Var out = t.push(a->val.array().tanh(), a->needs_grad, nullptr);
  out->backward = [a, out] {
    if (a->needs_grad) {
      ensure_grad(a);
      a->grad.array() += out->grad.array() * (1.0 - out->val.array().square());
    }
  };
  return out;
}

Var exp_(Tape& t, Var a) {
  Var out = t.push(a->val.array().exp(), a->needs_grad, nullptr);
  out->backward = [a, out] {
    if (a->needs_grad) {
      ensure_grad(a);
      a->grad.array() += out->grad.array() * out->val.array();
    }
  };
  return out;
}

Var log_(Tape& t, Var a) {
  Var out = t.push(a->val.array().log(), a->needs_grad, nullptr);
  out->backward = [a, out] {
    if (a->needs_grad) {
      ensure_grad(a);
      a->grad.array() += out->grad.array() / a->val.array();
    }
  };
  return out;
}

Var square(Tape& t, Var a) {
  Var out = t.push(a->val.array().square(), a->needs_grad, nullptr);
  out->backward = [a, out] {
    if (a->needs_grad) {
      ensure_grad(a);
      a->grad.array() += 2.0 * out->grad.array() * a->val.array();
    }
  };
  return out;
}

Var leaky_relu(Tape& t, Var a, double slope) {
  Mat v = a->val.unaryExpr([slope](double x) { return x >= 0 ? x : slope * x; });
  Var out = t.push(std::move(v), a->needs_grad, nullptr);
  out->backward = [a, slope, out] {
    if (!a->needs_grad) return;
    ensure_grad(a);
    a->grad.array() +=
        out->grad.array() *
        a->val.unaryExpr([slope](double x) { return x >= 0 ? 1.0 : slope; }).array();
  };
  return out;
}

Var clamp_soft(Tape& t, Var a, double lo, double hi) {
  // mid + half*tanh((x-mid)/half): identity near mid, range (lo, hi)
  const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
  Mat v = (((a->val.array() - mid) / half).tanh() * half + mid);
  Var out = t.push(std::move(v), a->needs_grad, nullptr);
  out->backward = [a, mid, half, out] {
    if (!a->needs_grad) return;
    ensure_grad(a);
    Eigen::ArrayXXd th = ((a->val.array() - mid) / half).tanh();
    a->grad.array() += out->grad.array() * (1.0 - th.square());
  };
  return out;
}

Var sum(Tape& t, Var a) {
  Mat v(1, 1);
  v(0, 0) = a->val.sum();
  Var out = t.push(std::move(v), a->needs_grad, nullptr);
  out->backward = [a, out] {
    if (a->needs_grad) { ensure_grad(a); a->grad.array() += out->grad(0, 0); }
  };
  return out;
}

Var sum_rows(Tape& t, Var a) {
  Var out = t.push(a->val.colwise().sum(), a->needs_grad, nullptr);
  out->backward = [a, out] {
    if (a->needs_grad) {
      ensure_grad(a);
      a->grad.rowwise() += out->grad.row(0);
    }
  };
  return out;
}

Var sum_cols(Tape& t, Var a) {
  Var out = t.push(a->val.rowwise().sum(), a->needs_grad, nullptr);
  out->backward = [a, out] {
    if (a->needs_grad) {
      ensure_grad(a);
      a->grad.colwise() += out->grad.col(0);
    }
  };
  return out;
}

Var mean_rows(Tape& t, Var a) {
  return scale(t, sum_rows(t, a), 1.0 / static_cast<double>(a->val.rows()));
}

Var slice_cols(Tape& t, Var a, int j0, int n) {
  check(j0 >= 0 && j0 + n <= a->val.cols(), "slice_cols: out of range");
  Var out = t.push(a->val.middleCols(j0, n), a->needs_grad, nullptr);
  out->backward = [a, j0, n, out] {
    if (a->needs_grad) { ensure_grad(a); a->grad.middleCols(j0, n) += out->grad; }
  };
  return out;
}

Var slice_rows(Tape& t, Var a, int i0, int n) {
  check(i0 >= 0 && i0 + n <= a->val.rows(), "slice_rows: out of range");
  Var out = t.push(a->val.middleRows(i0, n), a->needs_grad, nullptr);
  out->backward = [a, i0, n, out] {
    if (a->needs_grad) { ensure_grad(a); a->grad.middleRows(i0, n) += out->grad; }
  };
  return out;
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  check(!parts.empty(), "concat_cols: empty");
  Eigen::Index rows = parts[0]->val.rows(), cols = 0;
  bool ng = false;
  for (Var p : parts) {
    check(p->val.rows() == rows, "concat_cols: row mismatch");
    cols += p->val.cols();
    ng = ng || p->needs_grad;
  }
  Mat v(rows, cols);
  Eigen::Index j = 0;
  for (Var p : parts) {
    v.middleCols(j, p->val.cols()) = p->val;
    j += p->val.cols();
  }
  Var out = t.push(std::move(v), ng, nullptr);
  std::vector<Var> ps = parts;
  out->backward = [ps, out] {
    Eigen::Index j = 0;
    for (Var p : ps) {
      if (p->needs_grad) {
        ensure_grad(p);
        p->grad += out->grad.middleCols(j, p->val.cols());
      }
      j += p->val.cols();
    }
  };
  return out;
}

Var concat_rows(Tape& t, const std::vector<Var>& parts) {
  check(!parts.empty(), "concat_rows: empty");
  Eigen::Index cols = parts[0]->val.cols(), rows = 0;
  bool ng = false;
  for (Var p : parts) {
    check(p->val.cols() == cols, "concat_rows: col mismatch");
    rows += p->val.rows();
    ng = ng || p->needs_grad;
  }
  Mat v(rows, cols);
  Eigen::Index i = 0;
  for (Var p : parts) {
    v.middleRows(i, p->val.rows()) = p->val;
    i += p->val.rows();
  }
  Var out = t.push(std::move(v), ng, nullptr);
  std::vector<Var> ps = parts;
  out->backward = [ps, out] {
    Eigen::Index i = 0;
    for (Var p : ps) {
      if (p->needs_grad) {
        ensure_grad(p);
        p->grad += out->grad.middleRows(i, p->val.rows());
      }
      i += p->val.rows();
    }
  };
  return out;
}

Var gather_rows(Tape& t, Var a, const std::vector<int>& idx) {
  Mat v(static_cast<Eigen::Index>(idx.size()), a->val.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) v.row(i) = a->val.row(idx[i]);
  Var out = t.push(std::move(v), a->needs_grad, nullptr);
  std::vector<int> ix = idx;
  out->backward = [a, ix, out] {
    if (!a->needs_grad) return;
    ensure_grad(a);
    for (std::size_t i = 0; i < ix.size(); ++i)
      a->grad.row(ix[i]) += out->grad.row(i);
  };
  return out;
}

Var softmax_rows(Tape& t, Var a) {
  Mat v = a->val;
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    Eigen::RowVectorXd r = v.row(i).array() - v.row(i).maxCoeff();
    r = r.array().exp();
    v.row(i) = r / r.sum();
  }
  Var out = t.push(std::move(v), a->needs_grad, nullptr);
  out->backward = [a, out] {
    if (!a->needs_grad) return;
    ensure_grad(a);
    for (Eigen::Index i = 0; i < out->val.rows(); ++i) {
      const auto s = out->val.row(i).array();
      const auto g = out->grad.row(i).array();
      double dot = (s * g).sum();
      a->grad.row(i).array() += s * (g - dot);
    }
  };
  return out;
}

Var layer_norm_rows(Tape& t, Var a, double eps) {
  const Eigen::Index C = a->val.cols();
  Mat v(a->val.rows(), C);
  Eigen::VectorXd inv_std(a->val.rows());
  for (Eigen::Index i = 0; i < a->val.rows(); ++i) {
    double mu = a->val.row(i).mean();
    Eigen::RowVectorXd c = a->val.row(i).array() - mu;
    double var = c.squaredNorm() / static_cast<double>(C);
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    v.row(i) = c * inv_std(i);
  }
  Var out = t.push(std::move(v), a->needs_grad, nullptr);
  out->backward = [a, inv_std, C, out] {
    if (!a->needs_grad) return;
    ensure_grad(a);
    const double n = static_cast<double>(C);
    for (Eigen::Index i = 0; i < out->val.rows(); ++i) {
      const auto y = out->val.row(i).array();
      const auto g = out->grad.row(i).array();
      double gm = g.mean();
      double gy = (g * y).mean();
      a->grad.row(i).array() += inv_std(i) * (g - gm - y * gy);
      (void)n;
    }
  };
  return out;
}

Var logsumexp_rows(Tape& t, Var a) {
  Mat v(a->val.rows(), 1);
  for (Eigen::Index i = 0; i < a->val.rows(); ++i) {
    double m = a->val.row(i).maxCoeff();
    v(i, 0) = m + std::log((a->val.row(i).array() - m).exp().sum());
  }
  Var out = t.push(std::move(v), a->needs_grad, nullptr);
  out->backward = [a, out] {
    if (!a->needs_grad) return;
    ensure_grad(a);
    for (Eigen::Index i = 0; i < a->val.rows(); ++i) {
      a->grad.row(i).array() +=
          out->grad(i, 0) * (a->val.row(i).array() - out->val(i, 0)).exp();
    }
  };
  return out;
}

namespace {

// (row, col-in-patch) -> source column in the HxWxC row-major layout, or -1.
inline int src_col(int H, int W, int C, int h, int w, int kh, int kw, int c) {
  int hh = h + kh - 1, ww = w + kw - 1;
  if (hh < 0 || hh >= H || ww < 0 || ww >= W) return -1;
  return (hh * W + ww) * C + c;
}

}  // namespace

Var im2col3x3(Tape& t, Var a, int H, int W, int C) {
  check(a->val.cols() == static_cast<Eigen::Index>(H) * W * C,
        "im2col3x3: bad layout");
  const int N = static_cast<int>(a->val.rows());
  Mat v = Mat::Zero(static_cast<Eigen::Index>(N) * H * W, 9 * C);
  for (int n = 0; n < N; ++n)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        const Eigen::Index r = (static_cast<Eigen::Index>(n) * H + h) * W + w;
        for (int kh = 0; kh < 3; ++kh)
          for (int kw = 0; kw < 3; ++kw)
            for (int c = 0; c < C; ++c) {
              int sc = src_col(H, W, C, h, w, kh, kw, c);
              if (sc >= 0) v(r, (kh * 3 + kw) * C + c) = a->val(n, sc);
            }
      }
  Var out = t.push(std::move(v), a->needs_grad, nullptr);
  out->backward = [a, H, W, C, out] {
    if (!a->needs_grad) return;
    ensure_grad(a);
    const int N = static_cast<int>(a->val.rows());
    for (int n = 0; n < N; ++n)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          const Eigen::Index r = (static_cast<Eigen::Index>(n) * H + h) * W + w;
          for (int kh = 0; kh < 3; ++kh)
            for (int kw = 0; kw < 3; ++kw)
              for (int c = 0; c < C; ++c) {
                int sc = src_col(H, W, C, h, w, kh, kw, c);
                if (sc >= 0) a->grad(n, sc) += out->grad(r, (kh * 3 + kw) * C + c);
              }
        }
  };
  return out;
}

Var avgpool2x2(Tape& t, Var a, int H, int W, int C) {
  check(H % 2 == 0 && W % 2 == 0, "avgpool2x2: odd extent");
  check(a->val.cols() == static_cast<Eigen::Index>(H) * W * C,
        "avgpool2x2: bad layout");
  const int N = static_cast<int>(a->val.rows()), Ho = H / 2, Wo = W / 2;
  Mat v = Mat::Zero(N, static_cast<Eigen::Index>(Ho) * Wo * C);
  for (int n = 0; n < N; ++n)
    for (int h = 0; h < Ho; ++h)
      for (int w = 0; w < Wo; ++w)
        for (int c = 0; c < C; ++c) {
          double s = 0;
          for (int dh = 0; dh < 2; ++dh)
            for (int dw = 0; dw < 2; ++dw)
              s += a->val(n, ((2 * h + dh) * W + 2 * w + dw) * C + c);
          v(n, (h * Wo + w) * C + c) = 0.25 * s;
        }
  Var out = t.push(std::move(v), a->needs_grad, nullptr);
  out->backward = [a, H, W, C, out] {
    if (!a->needs_grad) return;
    ensure_grad(a);
    const int N = static_cast<int>(a->val.rows()), Ho = H / 2, Wo = W / 2;
    for (int n = 0; n < N; ++n)
      for (int h = 0; h < Ho; ++h)
        for (int w = 0; w < Wo; ++w)
          for (int c = 0; c < C; ++c) {
            double g = 0.25 * out->grad(n, (h * Wo + w) * C + c);
            for (int dh = 0; dh < 2; ++dh)
              for (int dw = 0; dw < 2; ++dw)
                a->grad(n, ((2 * h + dh) * W + 2 * w + dw) * C + c) += g;
          }
  };
  return out;
}

Var upsample2x2(Tape& t, Var a, int H, int W, int C) {
  check(a->val.cols() == static_cast<Eigen::Index>(H) * W * C,
        "upsample2x2: bad layout");
  const int N = static_cast<int>(a->val.rows()), Ho = H * 2, Wo = W * 2;
  Mat v(N, static_cast<Eigen::Index>(Ho) * Wo * C);
  for (int n = 0; n < N; ++n)
    for (int h = 0; h < Ho; ++h)
      for (int w = 0; w < Wo; ++w)
        for (int c = 0; c < C; ++c)
          v(n, (h * Wo + w) * C + c) = a->val(n, ((h / 2) * W + w / 2) * C + c);
  Var out = t.push(std::move(v), a->needs_grad, nullptr);
  out->backward = [a, H, W, C, out] {
    if (!a->needs_grad) return;
    ensure_grad(a);
    const int N = static_cast<int>(a->val.rows()), Ho = H * 2, Wo = W * 2;
    for (int n = 0; n < N; ++n)
      for (int h = 0; h < Ho; ++h)
        for (int w = 0; w < Wo; ++w)
          for (int c = 0; c < C; ++c)
            a->grad(n, ((h / 2) * W + w / 2) * C + c) +=
                out->grad(n, (h * Wo + w) * C + c);
  };
  return out;
}

Var reshape(Tape& t, Var a, int rows, int cols) {
  check(a->val.size() == static_cast<Eigen::Index>(rows) * cols,
        "reshape: size mismatch");
  // row-major reinterpretation
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMat rm = a->val;
  Eigen::Map<RowMat> m(rm.data(), rows, cols);
  Var out = t.push(Mat(m), a->needs_grad, nullptr);
  out->backward = [a, out] {
    if (!a->needs_grad) return;
    ensure_grad(a);
    RowMat g = out->grad;
    Eigen::Map<RowMat> back(g.data(), a->val.rows(), a->val.cols());
    a->grad += Mat(back);
  };
  return out;
}

}  // namespace poex::ad
