#pragma once

#include <Eigen/Dense>
#include <limits>
#include <vector>

namespace poex {

// PSNR in dB over the pixels flagged in `mask` only. Identical inputs on the
// masked region return +infinity.
double psnr(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
            const Eigen::MatrixXi& mask, double max_val = 1.0);

// Symmetric mean nearest-neighbor squared distance between point sets
// (rows are points).
double chamfer(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B);

// Exact earth mover distance by optimal assignment (|A| = |B| <= 512);
// returns the mean matched Euclidean distance.
double emd_exact(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B);

// Minimum-cost perfect matching on a square cost matrix (Hungarian method);
// returns the total cost and fills assignment[i] = matched column of row i.
double min_cost_assignment(const Eigen::MatrixXd& cost,
                           std::vector<int>* assignment = nullptr);

}  // namespace poex
