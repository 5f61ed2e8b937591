#include "poex/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace poex {

using nlohmann::json;

void FeatureMask::validate() const {
  if (obs.size() != query.size() || obs.size() < 1)
    throw std::invalid_argument("mask vectors must share length d >= 1");
  for (Eigen::Index j = 0; j < obs.size(); ++j) {
    if ((obs[j] != 0 && obs[j] != 1) || (query[j] != 0 && query[j] != 1))
      throw std::invalid_argument("mask entries must be binary");
    if (obs[j] * query[j] != 0)
      throw std::invalid_argument("obs and query masks must be disjoint");
  }
}

void MaskedSet::validate() const {
  if (elements.empty()) throw std::invalid_argument("set must have N >= 1");
  std::optional<Eigen::Index> tdim;
  for (const auto& e : elements) {
    if (e.dim() != d) throw std::invalid_argument("element dim mismatch");
    if (e.mask.dim() != d) throw std::invalid_argument("mask dim mismatch");
    e.mask.validate();
    for (Eigen::Index j = 0; j < e.values.size(); ++j) {
      if ((e.mask.obs[j] || e.mask.query[j]) && !std::isfinite(e.values[j]))
        throw std::invalid_argument("non-finite value at defined dim");
    }
    if (e.index) {
      if (tdim && *tdim != e.index->size())
        throw std::invalid_argument("index dim mismatch across elements");
      tdim = e.index->size();
    } else if (tdim) {
      throw std::invalid_argument("index present on some elements only");
    }
  }
  if (grid) {
    long g = static_cast<long>((*grid)[0]) * (*grid)[1] * (*grid)[2];
    if (g != d) throw std::invalid_argument("grid shape does not match d");
  }
}

MaskedSet MaskedSet::permuted(const std::vector<int>& order) const {
  if (order.size() != elements.size())
    throw std::invalid_argument("permutation length mismatch");
  std::vector<bool> seen(elements.size(), false);
  for (int i : order) {
    if (i < 0 || i >= static_cast<int>(elements.size()) || seen[i])
      throw std::invalid_argument("not a permutation");
    seen[i] = true;
  }
  MaskedSet out;
  out.d = d;
  out.grid = grid;
  out.elements.reserve(order.size());
  for (int i : order) out.elements.push_back(elements[i]);
  return out;
}

void FunctionSet::validate() const {
  if (functions.empty()) throw std::invalid_argument("K >= 1 required");
  for (const auto& f : functions) {
    f.validate();
    for (const auto& e : f.elements)
      if (!e.index) throw std::invalid_argument("function elements need an index");
  }
}

DenseBatch zero_impute(const MaskedSet& s) {
  s.validate();
  DenseBatch b;
  const int n = s.size(), d = s.d;
  b.x = Eigen::MatrixXd::Zero(n, d);
  b.b = Eigen::MatrixXi::Zero(n, d);
  b.q = Eigen::MatrixXi::Zero(n, d);
  b.grid = s.grid;
  for (int i = 0; i < n; ++i) {
    const auto& e = s.elements[i];
    for (int j = 0; j < d; ++j) {
      b.b(i, j) = e.mask.obs[j];
      b.q(i, j) = e.mask.query[j];
      if (e.mask.obs[j]) b.x(i, j) = e.values[j];
    }
  }
  return b;
}

DenseBatch full_impute(const MaskedSet& s) {
  DenseBatch b = zero_impute(s);
  for (int i = 0; i < s.size(); ++i)
    for (int j = 0; j < s.d; ++j)
      if (b.q(i, j)) b.x(i, j) = s.elements[i].values[j];
  return b;
}

namespace {

FeatureMask make_mask(const Eigen::VectorXi& obs, const Eigen::VectorXi& query) {
  FeatureMask m{obs, query};
  m.validate();
  return m;
}

std::vector<FeatureMask> bernoulli_masks(int n, int d, double p, Rng& rng) {
  if (p < 0 || p > 1) throw std::invalid_argument("p_obs must lie in [0,1]");
  std::vector<FeatureMask> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXi obs(d), query(d);
    for (int j = 0; j < d; ++j) {
      bool o = rand_uniform(rng) < p;
      obs[j] = o ? 1 : 0;
      query[j] = o ? 0 : 1;
    }
    out.push_back(make_mask(obs, query));
  }
  return out;
}

std::vector<FeatureMask> square_masks(int n, int d, int h, int w, Rng& rng,
                                      const std::optional<std::array<int, 3>>& grid) {
  if (!grid) throw std::invalid_argument("square mask needs grid-shaped data");
  const int H = (*grid)[0], W = (*grid)[1], C = (*grid)[2];
  if (h > H || w > W || h < 1 || w < 1)
    throw std::invalid_argument("square larger than grid");
  std::vector<FeatureMask> out;
  out.reserve(n);
  std::uniform_int_distribution<int> dh(0, H - h), dw(0, W - w);
  for (int i = 0; i < n; ++i) {
    int top = dh(rng), left = dw(rng);
    Eigen::VectorXi obs = Eigen::VectorXi::Zero(d);
    for (int r = top; r < top + h; ++r)
      for (int c = left; c < left + w; ++c)
        for (int ch = 0; ch < C; ++ch) obs[(r * W + c) * C + ch] = 1;
    Eigen::VectorXi query = Eigen::VectorXi::Ones(d) - obs;
    out.push_back(make_mask(obs, query));
  }
  return out;
}

std::vector<FeatureMask> split_masks(int n, int d, int n_obs, Rng& rng) {
  if (n_obs < 0 || n_obs > n)
    throw std::invalid_argument("split size must lie in [0, N]");
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> observed(n, false);
  for (int i = 0; i < n_obs; ++i) observed[order[i]] = true;
  std::vector<FeatureMask> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXi obs = observed[i] ? Eigen::VectorXi::Ones(d)
                                      : Eigen::VectorXi::Zero(d);
    Eigen::VectorXi query = Eigen::VectorXi::Ones(d) - obs;
    out.push_back(make_mask(obs, query));
  }
  return out;
}

}  // namespace

std::vector<FeatureMask> sample_mask(int n, int d, const MaskStrategy& strategy,
                                     Rng& rng,
                                     const std::optional<std::array<int, 3>>& grid) {
  if (n < 1 || d < 1) throw std::invalid_argument("need N >= 1, d >= 1");
  if (auto* p = std::get_if<BernoulliMask>(&strategy))
    return bernoulli_masks(n, d, p->p_obs, rng);
  if (auto* p = std::get_if<SquareMask>(&strategy))
    return square_masks(n, d, p->h, p->w, rng, grid);
  if (auto* p = std::get_if<ExpansionSplit>(&strategy))
    return split_masks(n, d, p->n_obs, rng);
  if (auto* p = std::get_if<ContextTarget>(&strategy))
    return split_masks(n, d, p->n_ctx, rng);
  if (auto* p = std::get_if<FunctionSubset>(&strategy)) {
    std::uniform_int_distribution<int> cnt(0, std::min(p->max_obs, n));
    return split_masks(n, d, cnt(rng), rng);
  }
  throw std::invalid_argument("unknown mask strategy");
}

MaskedSet with_masks(const MaskedSet& s, const std::vector<FeatureMask>& masks) {
  if (static_cast<int>(masks.size()) != s.size())
    throw std::invalid_argument("mask count mismatch");
  MaskedSet out = s;
  for (int i = 0; i < s.size(); ++i) out.elements[i].mask = masks[i];
  return out;
}

FunctionSet with_function_masks(const FunctionSet& fs, const MaskStrategy& strategy,
                                Rng& rng) {
  FunctionSet out = fs;
  for (auto& f : out.functions) {
    auto masks = sample_mask(f.size(), f.d, strategy, rng, f.grid);
    f = with_masks(f, masks);
  }
  return out;
}

Eigen::VectorXd positional_embedding(const Eigen::VectorXd& t, int dim) {
  if (dim < 2 || dim % 2 != 0)
    throw std::invalid_argument("embedding dim must be even and >= 2");
  const int per = dim / 2;
  Eigen::VectorXd out(dim * t.size());
  for (Eigen::Index k = 0; k < t.size(); ++k) {
    for (int i = 0; i < per; ++i) {
      // geometric frequencies from 1 to 1e4 rad over t in [0,1]
      double freq = per > 1 ? std::pow(10000.0, static_cast<double>(i) / (per - 1))
                            : 1.0;
      out[k * dim + 2 * i] = std::sin(t[k] * freq);
      out[k * dim + 2 * i + 1] = std::cos(t[k] * freq);
    }
  }
  return out;
}

namespace {

json element_to_json(const MaskedElement& e) {
  json j;
  j["x"] = std::vector<double>(e.values.data(), e.values.data() + e.values.size());
  j["obs"] = std::vector<int>(e.mask.obs.data(), e.mask.obs.data() + e.mask.obs.size());
  j["query"] = std::vector<int>(e.mask.query.data(),
                                e.mask.query.data() + e.mask.query.size());
  if (e.index)
    j["t"] = std::vector<double>(e.index->data(), e.index->data() + e.index->size());
  else
    j["t"] = nullptr;
  return j;
}

MaskedElement element_from_json(const json& j) {
  MaskedElement e;
  auto xv = j.at("x").get<std::vector<double>>();
  auto ov = j.at("obs").get<std::vector<int>>();
  auto qv = j.at("query").get<std::vector<int>>();
  e.values = Eigen::Map<Eigen::VectorXd>(xv.data(), xv.size());
  e.mask.obs = Eigen::Map<Eigen::VectorXi>(ov.data(), ov.size());
  e.mask.query = Eigen::Map<Eigen::VectorXi>(qv.data(), qv.size());
  if (j.contains("t") && !j.at("t").is_null()) {
    auto tv = j.at("t").get<std::vector<double>>();
    e.index = Eigen::Map<Eigen::VectorXd>(tv.data(), tv.size());
  }
  return e;
}

json set_body(const MaskedSet& s) {
  json arr = json::array();
  for (const auto& e : s.elements) arr.push_back(element_to_json(e));
  return arr;
}

MaskedSet set_from_body(const json& arr, int d,
                        const std::optional<std::array<int, 3>>& grid) {
  MaskedSet s;
  s.d = d;
  s.grid = grid;
  for (const auto& je : arr) s.elements.push_back(element_from_json(je));
  s.validate();
  return s;
}

}  // namespace

std::string serialize_set(const AnySet& s) {
  json j;
  if (auto* ms = std::get_if<MaskedSet>(&s)) {
    ms->validate();
    j["kind"] = "set";
    j["d"] = ms->d;
    j["grid"] = ms->grid ? json((*ms->grid)) : json(nullptr);
    j["elements"] = set_body(*ms);
    j["functions"] = nullptr;
  } else {
    const auto& fs = std::get<FunctionSet>(s);
    fs.validate();
    j["kind"] = "funcset";
    j["d"] = fs.functions[0].d;
    j["grid"] = nullptr;
    j["elements"] = json::array();
    json fn = json::array();
    for (const auto& f : fs.functions) fn.push_back(set_body(f));
    j["functions"] = fn;
  }
  j["meta"] = json::object();
  return j.dump();
}

AnySet deserialize_set(const std::string& line, int line_number) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("line " + std::to_string(line_number) +
                             ": malformed JSON: " + e.what());
  }
  try {
    const std::string kind = j.at("kind").get<std::string>();
    const int d = j.at("d").get<int>();
    std::optional<std::array<int, 3>> grid;
    if (j.contains("grid") && !j.at("grid").is_null())
      grid = j.at("grid").get<std::array<int, 3>>();
    if (kind == "set") return set_from_body(j.at("elements"), d, grid);
    if (kind == "funcset") {
      FunctionSet fs;
      for (const auto& jf : j.at("functions"))
        fs.functions.push_back(set_from_body(jf, d, std::nullopt));
      fs.validate();
      return fs;
    }
    throw std::runtime_error("unknown kind: " + kind);
  } catch (const std::exception& e) {
    throw std::runtime_error("line " + std::to_string(line_number) + ": " +
                             e.what());
  }
}

void write_jsonl(const std::vector<AnySet>& sets, std::ostream& out) {
  for (const auto& s : sets) out << serialize_set(s) << "\n";
}

std::vector<AnySet> read_jsonl(std::istream& in) {
  std::vector<AnySet> out;
  std::string line;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty()) continue;
    out.push_back(deserialize_set(line, ln));
  }
  return out;
}

std::vector<AnySet> read_jsonl_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  return read_jsonl(f);
}

void write_jsonl_file(const std::vector<AnySet>& sets, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  write_jsonl(sets, f);
}

namespace {

std::uint64_t hash_bytes(const void* p, std::size_t n, std::uint64_t h) {
  const auto* b = static_cast<const unsigned char*>(p);
  for (std::size_t i = 0; i < n; ++i) {  // FNV-1a
    h ^= b[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t element_hash(const MaskedElement& e) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (Eigen::Index j = 0; j < e.values.size(); ++j) {
    double v = (e.mask.obs[j] || e.mask.query[j]) ? e.values[j] : 0.0;
    h = hash_bytes(&v, sizeof(v), h);
    int m = e.mask.obs[j] * 2 + e.mask.query[j];
    h = hash_bytes(&m, sizeof(m), h);
  }
  if (e.index)
    h = hash_bytes(e.index->data(), sizeof(double) * e.index->size(), h);
  return h;
}

}  // namespace

std::uint64_t content_hash(const MaskedSet& s) {
  std::uint64_t acc = 0;  // order-independent sum of element hashes
  for (const auto& e : s.elements) acc += mix64(element_hash(e));
  return mix64(acc ^ static_cast<std::uint64_t>(s.d));
}

std::uint64_t content_hash(const FunctionSet& fs) {
  std::uint64_t acc = 0;
  for (const auto& f : fs.functions) acc += mix64(content_hash(f));
  return mix64(acc ^ 0xf5a5ULL);
}

}  // namespace poex
