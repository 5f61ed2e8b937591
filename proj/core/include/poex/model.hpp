#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "poex/data.hpp"
#include "poex/decoder.hpp"
#include "poex/flow.hpp"
#include "poex/nets.hpp"

namespace poex {

enum class TaskKind { set, set_image, indexed, multitask };

std::string to_string(TaskKind k);
std::string to_string(DecoderKind k);
TaskKind task_from_string(const std::string& s);
DecoderKind decoder_from_string(const std::string& s);

struct ModelConfig {
  TaskKind task = TaskKind::set;
  DecoderKind decoder = DecoderKind::gaussian;
  int d = 1;
  std::optional<std::array<int, 3>> grid;  // required for set_image
  int t_dim = 0;        // raw index dimensionality (0 = unindexed)
  int t_embed_dim = 32; // 0 = concatenate raw t instead of sinusoids
  NetConfig nets;
  int flow_blocks = 2;
  int coupling_blocks = 4;
  bool idp = false;     // ablation: decoder sees zeros for theta and zeta
  std::uint64_t seed = 0;
};

// Thrown when a loss or intermediate turns non-finite; carries the term name.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// The assembled conditional VAE over partially observed sets: posterior
// encoder, flow prior with base encoder, equivariant embedder and an
// arbitrary-conditional decoder, glued by the task-specific ELBO.
class PoexModel {
 public:
  explicit PoexModel(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }

  struct ElboParts {
    double elbo, recon, kl;
  };

  // Stochastic ELBO estimate. The per-set sampling rng is keyed to
  // combine(content_hash(s), sample_seed), so the estimate itself is
  // permutation invariant. Dispatches on the task kind; a MaskedSet given to
  // a multitask model is wrapped as a K=1 function set.
  ElboParts elbo(const AnySet& s, int S_kl, std::uint64_t sample_seed);

  // Builds the ELBO graph, runs backward on -(recon - kl_weight*kl)*scale and
  // accumulates parameter gradients. Returns the unweighted parts.
  ElboParts elbo_backward(const AnySet& s, int S_kl, std::uint64_t sample_seed,
                          double kl_weight, double grad_scale = 1.0);

  // Central finite differences on `subset` randomly chosen parameter entries
  // against the analytic gradient; returns the max relative error.
  double gradient_check(const AnySet& s, int subset, double fd_eps,
                        std::uint64_t seed);

  // log p(x_u | x_o) by tensor-grid quadrature over the latent (L <= 2).
  // grid_mass, when given, receives the prior mass captured by the grid.
  double marginal_loglik_quadrature(const MaskedSet& s, int nodes_per_dim = 200,
                                    double span = 8.0,
                                    double* grid_mass = nullptr);

  // Importance-sampling estimate of the same quantity (any L).
  double marginal_loglik_importance(const MaskedSet& s, int n_samples, Rng& rng);

  // Samples query values given the observed part; theta ~ p(theta | x_o).
  // mean_only pushes base means through the decoder instead of noise draws.
  // Returns N x d rows with observed values kept and query dims filled.
  Eigen::MatrixXd impute(const MaskedSet& s, Rng& rng, bool mean_only = false,
                         Eigen::VectorXd* per_element_loglik = nullptr);
  // Same for function sets; rows are concatenated in function order.
  Eigen::MatrixXd impute(const FunctionSet& fs, Rng& rng, bool mean_only = false,
                         Eigen::VectorXd* per_element_loglik = nullptr);

  bool trained = false;  // set by the training loop, persisted in checkpoints

 private:
  ModelConfig cfg_;
  ParamStore ps_;
  std::unique_ptr<LatentFlow> flow_;
  std::unique_ptr<Decoder> decoder_;

  FunctionSet wrap(const MaskedSet& s) const;
  void init_params();

  // Featurized rows for one masked set: [values, obs, query, t-embedding].
  Eigen::MatrixXd featurize(const DenseBatch& b, const MaskedSet& s,
                            bool include_query_mask) const;

  struct Encoded {
    GaussianParamsVar q;        // posterior
    ad::Var prior_embed;        // 1 x E
    std::vector<ad::Var> zeta;  // per function (single entry unless multitask)
  };
  Encoded encode(NetCtx& c, const FunctionSet& fs) const;

  ad::Var decoder_ctx(NetCtx& c, const MaskedSet& f, ad::Var theta,
                      ad::Var zeta) const;

  ElboParts elbo_impl(ad::Tape& t, const FunctionSet& fs, int S_kl,
                      std::uint64_t sample_seed, ad::Var* loss_out,
                      double kl_weight);
};

}  // namespace poex
