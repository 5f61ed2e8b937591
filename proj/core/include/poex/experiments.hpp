#pragma once

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <string>
#include <vector>

#include "poex/data.hpp"
#include "poex/model.hpp"

namespace poex {

// ---- synthetic generators ----

// Multi-task GP: K correlated functions drawn jointly from a Kronecker
// covariance (task kernel: unit diagonal, c off-diagonal) x (Gaussian kernel
// over shared inputs), plus per-task observation noise.
struct MtgpSpec {
  int k_tasks = 5;
  double c = 0.9;          // inter-task correlation, in (-1/(K-1), 1]
  double lengthscale = 0.2;
  double noise_std = 0.05;
  int n_points = 30;       // per task, shared inputs
  double t_lo = 0.0, t_hi = 1.0;
  int max_obs = 10;        // function_subset mask parameter

  void validate() const;
};

struct MtgpDraw {
  FunctionSet fs;
  Eigen::MatrixXd latent;  // K x n noiseless function values
  Eigen::VectorXd inputs;  // shared inputs, length n
};

MtgpDraw generate_mtgp(const MtgpSpec& spec, Rng& rng);

// Biased point cloud on a parametric surface: n_keep of n_total candidates
// kept with probability proportional to exp(sign * |x - m|^2 / T^2); the
// default sign -1 concentrates the kept points near the center m.
struct BiasedCloudSpec {
  enum class Surface { sphere, torus, superellipsoid };
  Surface surface = Surface::sphere;
  int n_total = 512;
  int n_keep = 64;
  double temperature = 0.1;
  Eigen::Vector3d center = Eigen::Vector3d(0.0, 0.0, 0.9);
  double bias_sign = -1.0;

  void validate() const;
};

struct BiasedCloudDraw {
  MaskedSet biased;       // n_keep points, fully observed
  MaskedSet uniform_ref;  // independent uniform cloud of n_total points
};

BiasedCloudDraw generate_biased_cloud(const BiasedCloudSpec& spec, Rng& rng);

// Class-conditional glyph sets: `set_size` images of the same label per set.
std::vector<MaskedSet> glyph_sets(const Eigen::MatrixXd& images,
                                  const std::vector<int>& labels,
                                  const std::vector<int>& classes, int set_size,
                                  int n_sets, const std::array<int, 3>& grid,
                                  Rng& rng);

// ---- application pipelines ----

struct ImputeResult {
  std::vector<Eigen::MatrixXd> samples;  // n_samples of N x d filled rows
  Eigen::VectorXd loglik;                // per element, ground truth when known
  bool proxy = false;  // true when the likelihood is the ELBO proxy (L > 2)
};

ImputeResult impute_set(const MaskedSet& s, PoexModel& m, int n_samples, Rng& rng);

// Generates n_new fully unobserved elements conditioned on the observed ones.
Eigen::MatrixXd expand_set(const MaskedSet& s, PoexModel& m, int n_new, Rng& rng);

// -log p(x_i full | selected elements observed); quadrature when L <= 2,
// otherwise the ELBO proxy (flagged through *proxy).
double conditional_entropy_estimate(int i, const MaskedSet& s,
                                    const std::vector<int>& selected,
                                    PoexModel& m, bool* proxy = nullptr);

// Greedy minimum-likelihood selection driven by an arbitrary conditional
// log-likelihood functor loglik(i, selected). Ties break on the lowest index.
std::vector<int> greedy_compress(
    int n, int budget,
    const std::function<double(int, const std::vector<int>&)>& loglik);

// Model-driven wrapper over the functor form.
std::vector<int> greedy_compress(const MaskedSet& s, int budget, PoexModel& m);

// Neural-process prediction: posterior over targets given an indexed context.
struct NpPrediction {
  Eigen::MatrixXd mean;    // n_targets x d
  Eigen::MatrixXd stddev;  // n_targets x d
  std::vector<Eigen::MatrixXd> samples;
};

NpPrediction np_predict(const MaskedSet& context,
                        const std::vector<Eigen::VectorXd>& targets, PoexModel& m,
                        int n_samples, Rng& rng);

// ---- baseline subset selectors (compression comparison) ----
std::vector<int> uniform_subset(int n, int budget, Rng& rng);
std::vector<int> kmeans_subset(const Eigen::MatrixXd& points, int budget, Rng& rng,
                               int iters = 25);
std::vector<int> farthest_point_subset(const Eigen::MatrixXd& points, int budget,
                                       Rng& rng);

Eigen::MatrixXd set_points(const MaskedSet& s);
MaskedSet points_to_set(const Eigen::MatrixXd& points, bool observed = true);

}  // namespace poex
