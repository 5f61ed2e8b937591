#include "poex/nets.hpp"

#include <cmath>
#include <stdexcept>

namespace poex {

using ad::Var;

namespace {

Eigen::MatrixXd& ensure_param(NetCtx& c, const std::string& name, int rows,
                              int cols) {
  if (c.ps.has(name)) {
    auto& m = c.ps.value(name);
    if (m.rows() != rows || m.cols() != cols)
      throw std::logic_error("parameter shape drift: " + name);
    return m;
  }
  if (!c.init_rng)
    throw std::logic_error("parameter missing outside init phase: " + name);
  double s = 1.0 / std::sqrt(static_cast<double>(rows));
  return c.ps.create(name, rows, cols, s, *c.init_rng);
}

}  // namespace

Var linear(NetCtx& c, const std::string& name, Var x, int out_dim) {
  const int in = static_cast<int>(x->val.cols());
  ensure_param(c, name + ".W", in, out_dim);
  if (!c.ps.has(name + ".b")) c.ps.create_zeros(name + ".b", 1, out_dim);
  Var W = c.ps.leaf(c.tape, name + ".W");
  Var b = c.ps.leaf(c.tape, name + ".b");
  return ad::add_rowvec(c.tape, ad::matmul(c.tape, x, W), b);
}

Var mlp(NetCtx& c, const std::string& name, Var x, int hidden, int out_dim) {
  Var h = ad::tanh_(c.tape, linear(c, name + ".l1", x, hidden));
  return linear(c, name + ".l2", h, out_dim);
}

Var attention_block(NetCtx& c, const std::string& name, Var queries,
                    Var keys_values) {
  const int E = static_cast<int>(queries->val.cols());
  ad::check(keys_values->val.cols() == E, "attention: width mismatch");
  const int H = std::max(1, std::min(c.cfg.heads, E));
  ad::check(E % H == 0, "attention: width not divisible by head count");
  const int dk = E / H;
  ad::Tape& t = c.tape;

  Var qn = ad::layer_norm_rows(t, queries);
  Var kn = (queries == keys_values) ? qn : ad::layer_norm_rows(t, keys_values);
  Var Q = linear(c, name + ".q", qn, E);
  Var K = linear(c, name + ".k", kn, E);
  Var V = linear(c, name + ".v", kn, E);

  std::vector<Var> heads;
  heads.reserve(H);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  for (int h = 0; h < H; ++h) {
    Var Qh = ad::slice_cols(t, Q, h * dk, dk);
    Var Kh = ad::slice_cols(t, K, h * dk, dk);
    Var Vh = ad::slice_cols(t, V, h * dk, dk);
    Var logits = ad::scale(t, ad::matmul(t, Qh, ad::transpose(t, Kh)), inv_sqrt);
    Var A = ad::softmax_rows(t, logits);
    heads.push_back(ad::matmul(t, A, Vh));
  }
  Var attended = linear(c, name + ".o", ad::concat_cols(t, heads), E);
  Var x1 = ad::add(t, queries, attended);
  Var ff = mlp(c, name + ".ff", ad::layer_norm_rows(t, x1), c.cfg.hidden, E);
  return ad::add(t, x1, ff);
}

Var equivariant_embed_vectors(NetCtx& c, const std::string& prefix, Var rows) {
  Var h = linear(c, prefix + ".in", rows, c.cfg.embed_dim);
  for (int b = 0; b < c.cfg.blocks; ++b)
    h = attention_block(c, prefix + ".blk" + std::to_string(b), h, h);
  return h;
}

Var invariant_embed_vectors(NetCtx& c, const std::string& prefix, Var rows) {
  return ad::mean_rows(c.tape, equivariant_embed_vectors(c, prefix, rows));
}

namespace {

// 3x3 same-padding convolution via im2col: Nx(H*W*Cin) -> Nx(H*W*Cout).
Var conv3x3(NetCtx& c, const std::string& name, Var rows, int H, int W, int Cin,
            int Cout) {
  const int N = static_cast<int>(rows->val.rows());
  Var cols = ad::im2col3x3(c.tape, rows, H, W, Cin);
  ensure_param(c, name + ".W", 9 * Cin, Cout);
  if (!c.ps.has(name + ".b")) c.ps.create_zeros(name + ".b", 1, Cout);
  Var W_ = c.ps.leaf(c.tape, name + ".W");
  Var b_ = c.ps.leaf(c.tape, name + ".b");
  Var y = ad::add_rowvec(c.tape, ad::matmul(c.tape, cols, W_), b_);
  return ad::reshape(c.tape, y, N, H * W * Cout);
}

}  // namespace

Var invariant_embed_images(NetCtx& c, const std::string& prefix, Var rows,
                           const std::array<int, 3>& grid_in) {
  int H = grid_in[0], W = grid_in[1], Cin = grid_in[2];
  ad::check(H % 4 == 0 && W % 4 == 0, "image extent must be divisible by 4");
  const int Cc = c.cfg.conv_channels;
  Var h = ad::tanh_(c.tape, conv3x3(c, prefix + ".c1", rows, H, W, Cin, Cc));
  h = ad::avgpool2x2(c.tape, h, H, W, Cc);
  H /= 2; W /= 2;
  h = ad::tanh_(c.tape, conv3x3(c, prefix + ".c2", h, H, W, Cc, Cc));
  h = ad::avgpool2x2(c.tape, h, H, W, Cc);
  Var per_element = linear(c, prefix + ".proj", h, c.cfg.embed_dim);
  return ad::mean_rows(c.tape, per_element);
}

namespace {

// Self-attention across the N set elements independently at each spatial
// position; weights shared across positions.
Var position_attention(NetCtx& c, const std::string& name, Var rows, int H,
                       int W, int C) {
  std::vector<Var> outs;
  outs.reserve(H * W);
  NetCtx sub = c;
  for (int p = 0; p < H * W; ++p) {
    Var slice = ad::slice_cols(c.tape, rows, p * C, C);
    outs.push_back(attention_block(sub, name, slice, slice));
    sub.init_rng = nullptr;  // params exist after the first position
  }
  return ad::concat_cols(c.tape, outs);
}

}  // namespace

Var equivariant_embed_images(NetCtx& c, const std::string& prefix, Var rows,
                             const std::array<int, 3>& grid_in) {
  const int H = grid_in[0], W = grid_in[1], Cin = grid_in[2];
  ad::check(H % 2 == 0 && W % 2 == 0, "image extent must be even");
  const int Cz = c.cfg.zeta_channels;
  NetCtx sub = c;
  sub.cfg.heads = std::min(c.cfg.heads, 2);
  sub.cfg.hidden = std::max(8, Cz);

  Var h = ad::tanh_(c.tape, conv3x3(c, prefix + ".c1", rows, H, W, Cin, Cz));
  Var full = position_attention(sub, prefix + ".attn1", h, H, W, Cz);

  // coarse branch: pooled attention, upsampled back to full resolution
  Var low = ad::avgpool2x2(c.tape, full, H, W, Cz);
  low = ad::tanh_(c.tape, conv3x3(c, prefix + ".c2", low, H / 2, W / 2, Cz, Cz));
  low = position_attention(sub, prefix + ".attn2", low, H / 2, W / 2, Cz);
  Var up = ad::upsample2x2(c.tape, low, H / 2, W / 2, Cz);

  // merge channels with a 1x1 convolution
  const int N = static_cast<int>(rows->val.rows());
  Var both = ad::concat_cols(
      c.tape, {ad::reshape(c.tape, full, N * H * W, Cz),
               ad::reshape(c.tape, up, N * H * W, Cz)});
  Var merged = ad::tanh_(c.tape, linear(c, prefix + ".merge", both, Cz));
  return ad::reshape(c.tape, merged, N, H * W * Cz);
}

Var invariant_embed_functions(NetCtx& c, const std::string& prefix,
                              const std::vector<Var>& function_rows) {
  ad::check(!function_rows.empty(), "K >= 1 required");
  std::vector<Var> per_function;
  per_function.reserve(function_rows.size());
  NetCtx sub = c;
  for (Var rows : function_rows) {
    per_function.push_back(invariant_embed_vectors(sub, prefix + ".inner", rows));
    sub.init_rng = nullptr;
  }
  return ad::mean_rows(c.tape, ad::concat_rows(c.tape, per_function));
}

std::vector<Var> equivariant_embed_functions(NetCtx& c, const std::string& prefix,
                                             const std::vector<Var>& function_rows) {
  const int K = static_cast<int>(function_rows.size());
  ad::check(K >= 1, "K >= 1 required");
  ad::Tape& t = c.tape;
  NetCtx sub = c;

  std::vector<Var> base;
  base.reserve(K);
  for (Var rows : function_rows)
    base.push_back(linear(sub, prefix + ".in", rows, c.cfg.embed_dim));

  std::vector<Var> out;
  out.reserve(K);
  for (int k = 0; k < K; ++k) {
    Var self_part = attention_block(sub, prefix + ".self", base[k], base[k]);
    Var cross_part;
    if (K == 1) {
      cross_part = t.leaf(ad::Mat::Zero(base[k]->val.rows(), c.cfg.embed_dim));
    } else {
      std::vector<Var> crossed;
      for (int k2 = 0; k2 < K; ++k2) {
        if (k2 == k) continue;
        crossed.push_back(attention_block(sub, prefix + ".cross", base[k], base[k2]));
      }
      cross_part = crossed[0];
      for (std::size_t i = 1; i < crossed.size(); ++i)
        cross_part = ad::add(t, cross_part, crossed[i]);
      cross_part = ad::scale(t, cross_part, 1.0 / static_cast<double>(K - 1));
    }
    Var merged = ad::concat_cols(t, {self_part, cross_part});
    out.push_back(linear(sub, prefix + ".merge", merged, c.cfg.embed_dim));
  }
  return out;
}

GaussianParamsVar gaussian_head(NetCtx& c, const std::string& prefix, Var h,
                                int latent_dim) {
  Var mean = linear(c, prefix + ".mean", h, latent_dim);
  Var lv = linear(c, prefix + ".logvar", h, latent_dim);
  lv = ad::clamp_soft(c.tape, lv, c.cfg.logvar_lo, c.cfg.logvar_hi);
  return {mean, lv};
}

}  // namespace poex
