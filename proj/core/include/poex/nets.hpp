#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "poex/params.hpp"
#include "poex/tape.hpp"

namespace poex {

struct NetConfig {
  int embed_dim = 64;    // E
  int latent_dim = 32;   // L
  int heads = 4;
  int blocks = 2;        // attention blocks per encoder
  int hidden = 64;       // feed-forward widths
  int conv_channels = 16;
  int zeta_channels = 8;  // equivariant image feature channels
  double logvar_lo = -10.0, logvar_hi = 10.0;
};

struct GaussianParamsVar {
  ad::Var mean;     // 1xL
  ad::Var log_var;  // 1xL, clamped to [logvar_lo, logvar_hi]
};

// Build context: tape + parameter store + optional initializer. Parameters
// are created on first use when init_rng is set; afterwards a missing
// parameter is an error (shape drift between builds).
struct NetCtx {
  ad::Tape& tape;
  ParamStore& ps;
  Rng* init_rng = nullptr;
  NetConfig cfg;
};

// y = x W + b, creating W (in x out) and b (1 x out) under `name` if needed.
ad::Var linear(NetCtx& c, const std::string& name, ad::Var x, int out_dim);

// Two-layer tanh MLP.
ad::Var mlp(NetCtx& c, const std::string& name, ad::Var x, int hidden, int out_dim);

// Pre-norm multi-head attention block with residual and feed-forward.
// queries MxE, keys_values NxE -> MxE. Self-attention: pass the same Var.
ad::Var attention_block(NetCtx& c, const std::string& name, ad::Var queries,
                        ad::Var keys_values);

// Stack of self-attention blocks, no pooling: NxDin -> NxE (equivariant).
ad::Var equivariant_embed_vectors(NetCtx& c, const std::string& prefix, ad::Var rows);

// Equivariant stack followed by mean pooling: NxDin -> 1xE (invariant).
ad::Var invariant_embed_vectors(NetCtx& c, const std::string& prefix, ad::Var rows);

// Per-element conv tower, mean pooled over the set: Nx(H*W*Cin) -> 1xE.
ad::Var invariant_embed_images(NetCtx& c, const std::string& prefix, ad::Var rows,
                               const std::array<int, 3>& grid_in);

// Alternating per-element convolutions and per-spatial-position attention
// across the set; output resolution matches input: Nx(H*W*Cin) -> Nx(H*W*Cz).
ad::Var equivariant_embed_images(NetCtx& c, const std::string& prefix, ad::Var rows,
                                 const std::array<int, 3>& grid_in);

// Per-function inner encoders averaged across functions: 1xE (invariant at
// both levels). `function_rows[k]` is the featurized N_k x Din matrix.
ad::Var invariant_embed_functions(NetCtx& c, const std::string& prefix,
                                  const std::vector<ad::Var>& function_rows);

// Self-attention within each function plus mean cross-attention to the other
// functions; K=1 gets a zero cross part. Returns one N_k x E block per k.
std::vector<ad::Var> equivariant_embed_functions(NetCtx& c, const std::string& prefix,
                                                 const std::vector<ad::Var>& function_rows);

// Affine map from an invariant embedding to clamped Gaussian parameters.
GaussianParamsVar gaussian_head(NetCtx& c, const std::string& prefix, ad::Var h,
                                int latent_dim);

}  // namespace poex
