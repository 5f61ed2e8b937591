#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "poex/metrics.hpp"
#include "poex/rng.hpp"

using namespace poex;

namespace {

double emd_brute(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  int n = static_cast<int>(A.rows());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0;
    for (int i = 0; i < n; ++i) total += (A.row(i) - B.row(perm[i])).norm();
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / n;
}

double chamfer_brute(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  auto one_way = [](const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
    double total = 0;
    for (int i = 0; i < X.rows(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < Y.rows(); ++j)
        best = std::min(best, (X.row(i) - Y.row(j)).squaredNorm());
      total += best;
    }
    return total / X.rows();
  };
  return one_way(A, B) + one_way(B, A);
}

}  // namespace

TEST_CASE("metrics: psnr analytic values") {
  Eigen::MatrixXd a(2, 2), b(2, 2);
  a << 0, 0.5, 1, 0.25;
  b = a;
  Eigen::MatrixXi mask = Eigen::MatrixXi::Ones(2, 2);
  CHECK(psnr(a, b, mask) == std::numeric_limits<double>::infinity());

  b(0, 0) = 0.1;  // mse over 4 pixels = 0.01/4
  double expect = 10.0 * std::log10(1.0 / (0.01 / 4.0));
  CHECK(psnr(a, b, mask) == doctest::Approx(expect).epsilon(1e-12));

  // masked region restricted to the changed pixel
  Eigen::MatrixXi one = Eigen::MatrixXi::Zero(2, 2);
  one(0, 0) = 1;
  CHECK(psnr(a, b, one) == doctest::Approx(10.0 * std::log10(1.0 / 0.01)).epsilon(1e-12));

  // errors outside the mask don't count
  one(0, 0) = 0;
  one(1, 1) = 1;
  CHECK(psnr(a, b, one) == std::numeric_limits<double>::infinity());

  CHECK_THROWS((void)psnr(a, b, Eigen::MatrixXi::Zero(2, 2)));
}

TEST_CASE("metrics: chamfer matches brute force") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    int na = 1 + static_cast<int>(rand_uniform(rng) * 7);
    int nb = 1 + static_cast<int>(rand_uniform(rng) * 7);
    Eigen::MatrixXd A(na, 2), B(nb, 2);
    for (int i = 0; i < na; ++i)
      for (int j = 0; j < 2; ++j) A(i, j) = rand_normal(rng);
    for (int i = 0; i < nb; ++i)
      for (int j = 0; j < 2; ++j) B(i, j) = rand_normal(rng);
    CHECK(chamfer(A, B) == doctest::Approx(chamfer_brute(A, B)).epsilon(1e-12));
  }
}

TEST_CASE("metrics: exact emd matches permutation enumeration") {
  Rng rng(4);
  for (int trial = 0; trial < 15; ++trial) {
    int n = 2 + static_cast<int>(rand_uniform(rng) * 5);  // up to 6
    Eigen::MatrixXd A(n, 3), B(n, 3);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 3; ++j) {
        A(i, j) = rand_normal(rng);
        B(i, j) = rand_normal(rng);
      }
    CHECK(emd_exact(A, B) == doctest::Approx(emd_brute(A, B)).epsilon(1e-10));
  }
}

TEST_CASE("metrics: hungarian assignment matches enumeration") {
  Rng rng(5);
  for (int trial = 0; trial < 15; ++trial) {
    int n = 2 + static_cast<int>(rand_uniform(rng) * 5);
    Eigen::MatrixXd cost(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) cost(i, j) = rand_uniform(rng) * 10.0;

    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double total = 0;
      for (int i = 0; i < n; ++i) total += cost(i, perm[i]);
      best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));

    std::vector<int> assign;
    double got = min_cost_assignment(cost, &assign);
    CHECK(got == doctest::Approx(best).epsilon(1e-10));

    // assignment is a permutation achieving the reported cost
    std::vector<int> seen(n, 0);
    double recomputed = 0;
    for (int i = 0; i < n; ++i) {
      REQUIRE(assign[i] >= 0);
      REQUIRE(assign[i] < n);
      seen[assign[i]]++;
      recomputed += cost(i, assign[i]);
    }
    for (int j = 0; j < n; ++j) CHECK(seen[j] == 1);
    CHECK(recomputed == doctest::Approx(got).epsilon(1e-10));
  }
}
