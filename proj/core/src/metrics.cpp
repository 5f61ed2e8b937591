#include "poex/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace poex {

double psnr(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
            const Eigen::MatrixXi& mask, double max_val) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() != mask.rows() ||
      a.cols() != mask.cols())
    throw std::invalid_argument("psnr: shape mismatch");
  double mse = 0;
  long count = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      if (mask(i, j)) {
        double d = a(i, j) - b(i, j);
        mse += d * d;
        ++count;
      }
  if (count == 0) throw std::invalid_argument("psnr: empty mask");
  mse /= static_cast<double>(count);
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_val * max_val / mse);
}

double chamfer(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  if (A.rows() == 0 || B.rows() == 0)
    throw std::invalid_argument("chamfer: empty point set");
  auto one_way = [](const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
    double total = 0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < Y.rows(); ++j)
        best = std::min(best, (X.row(i) - Y.row(j)).squaredNorm());
      total += best;
    }
    return total / static_cast<double>(X.rows());
  };
  return one_way(A, B) + one_way(B, A);
}

// Jonker-Volgenant style shortest augmenting path assignment, O(n^3).
double min_cost_assignment(const Eigen::MatrixXd& cost,
                           std::vector<int>* assignment) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw std::invalid_argument("assignment: square matrix required");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(n + 1, 0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, false);
    do {
      used[j0] = true;
      int i0 = p[j0], j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0;
  if (assignment) assignment->assign(n, -1);
  for (int j = 1; j <= n; ++j) {
    if (p[j] == 0) continue;
    total += cost(p[j] - 1, j - 1);
    if (assignment) (*assignment)[p[j] - 1] = j - 1;
  }
  return total;
}

double emd_exact(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  if (A.rows() != B.rows())
    throw std::invalid_argument("emd: point counts must match");
  if (A.rows() > 512) throw std::invalid_argument("emd: size cap is 512");
  const int n = static_cast<int>(A.rows());
  Eigen::MatrixXd cost(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) cost(i, j) = (A.row(i) - B.row(j)).norm();
  return min_cost_assignment(cost) / static_cast<double>(n);
}

}  // namespace poex
