#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "poex/rng.hpp"

namespace poex {

// Disjoint observed / query indicator pair over d features.
struct FeatureMask {
  Eigen::VectorXi obs;    // 1 = conditioned on
  Eigen::VectorXi query;  // 1 = to be predicted

  int dim() const { return static_cast<int>(obs.size()); }
  void validate() const;
};

struct MaskedElement {
  Eigen::VectorXd values;  // length d; meaningful where obs or query is set
  FeatureMask mask;
  std::optional<Eigen::VectorXd> index;  // t_i, present iff the task is indexed

  int dim() const { return static_cast<int>(values.size()); }
};

struct MaskedSet {
  std::vector<MaskedElement> elements;
  int d = 0;
  // Optional grid metadata for image-shaped elements (d = H*W*C).
  std::optional<std::array<int, 3>> grid;  // {H, W, C}

  int size() const { return static_cast<int>(elements.size()); }
  void validate() const;
  MaskedSet permuted(const std::vector<int>& order) const;
};

struct FunctionSet {
  std::vector<MaskedSet> functions;  // every element carries an index

  int size() const { return static_cast<int>(functions.size()); }
  void validate() const;
};

using AnySet = std::variant<MaskedSet, FunctionSet>;

// Dense tensor view: zeros at unobserved entries plus both indicator masks.
struct DenseBatch {
  Eigen::MatrixXd x;  // N x d, zero where b = 0
  Eigen::MatrixXi b;  // observed indicator
  Eigen::MatrixXi q;  // query indicator
  std::optional<std::array<int, 3>> grid;

  int n() const { return static_cast<int>(x.rows()); }
  int d() const { return static_cast<int>(x.cols()); }
};

DenseBatch zero_impute(const MaskedSet& s);

// Dense view where query ground truth is also filled in (posterior input).
DenseBatch full_impute(const MaskedSet& s);

// ---- mask sampling strategies ----
struct BernoulliMask { double p_obs; };
struct SquareMask { int h, w; };                 // observed square on the grid
struct ExpansionSplit { int n_obs; };            // n_obs fully observed, rest fully queried
struct ContextTarget { int n_ctx; };             // indexed variant of the split
struct FunctionSubset { int max_obs; };          // per-function observed count <= max_obs
using MaskStrategy = std::variant<BernoulliMask, SquareMask, ExpansionSplit,
                                  ContextTarget, FunctionSubset>;

std::vector<FeatureMask> sample_mask(int n, int d, const MaskStrategy& strategy,
                                     Rng& rng,
                                     const std::optional<std::array<int, 3>>& grid
                                     = std::nullopt);

MaskedSet with_masks(const MaskedSet& s, const std::vector<FeatureMask>& masks);
FunctionSet with_function_masks(const FunctionSet& fs, const MaskStrategy& strategy,
                                Rng& rng);

// Sinusoidal embedding of an index vector; dim must be even, defaults to 32.
Eigen::VectorXd positional_embedding(const Eigen::VectorXd& t, int dim = 32);

// ---- JSON-lines serialization ----
std::string serialize_set(const AnySet& s);
AnySet deserialize_set(const std::string& line, int line_number = 0);
void write_jsonl(const std::vector<AnySet>& sets, std::ostream& out);
std::vector<AnySet> read_jsonl(std::istream& in);
std::vector<AnySet> read_jsonl_file(const std::string& path);
void write_jsonl_file(const std::vector<AnySet>& sets, const std::string& path);

// Order-independent content hash: identical for any permutation of elements
// (and of functions). Keys the per-set sampling rng so ELBO estimates are
// permutation invariant, not just their expectations.
std::uint64_t content_hash(const MaskedSet& s);
std::uint64_t content_hash(const FunctionSet& fs);

}  // namespace poex
