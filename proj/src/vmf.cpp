#include "compnet/vmf.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "compnet/errors.hpp"

namespace compnet::vmf {

namespace {

double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

void VmfDictionary::validate() const {
  if (K <= 0 || D <= 0 || mu.size() != static_cast<std::size_t>(K) * D) throw ShapeError("dictionary shape mismatch");
  if (!(sigma > 0.0)) throw DomainError("vMF concentration must be positive");
  for (int k = 0; k < K; ++k) {
    const auto m = kernel(k);
    const double n = std::sqrt(dot(m.data(), m.data(), D));
    if (std::abs(n - 1.0) > 1e-6) throw DomainError("kernel " + std::to_string(k) + " is not unit-norm");
  }
}

void VmfDictionary::renormalize() {
  for (int k = 0; k < K; ++k) normalize_or_e1(kernel(k));
}

double vmf_log_density(std::span<const double> f, int k, const VmfDictionary& dict) {
  if (k < 0 || k >= dict.K) throw IndexError("kernel index out of range");
  if (static_cast<int>(f.size()) != dict.D) throw ShapeError("feature dimension mismatch");
  const double n = std::sqrt(dot(f.data(), f.data(), dict.D));
  if (std::abs(n - 1.0) > 1e-3) throw DomainError("feature vector is not unit-norm");
  return dict.sigma * dot(dict.kernel(k).data(), f.data(), dict.D);
}

LikelihoodTensor compute_likelihood_tensor(const FeatureMap& F, const VmfDictionary& dict) {
  if (F.D != dict.D)
    throw ShapeError("feature dimension " + std::to_string(F.D) + " does not match dictionary dimension " +
                     std::to_string(dict.D));
  LikelihoodTensor L;
  L.H = F.H;
  L.W = F.W;
  L.K = dict.K;
  L.values.resize(static_cast<std::size_t>(F.positions()) * dict.K);
  for (int p = 0; p < F.positions(); ++p) {
    const double* f = F.at(p).data();
    for (int k = 0; k < dict.K; ++k)
      L.values[static_cast<std::size_t>(p) * dict.K + k] = dict.sigma * dot(dict.kernel(k).data(), f, dict.D);
  }
  return L;
}

std::vector<int> hard_assignments(const FeatureMap& F, const VmfDictionary& dict) {
  if (F.D != dict.D) throw ShapeError("feature dimension does not match dictionary dimension");
  std::vector<int> out(F.positions());
  for (int p = 0; p < F.positions(); ++p) {
    int best = 0;
    double best_cos = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < dict.K; ++k) {
      const double c = dot(dict.kernel(k).data(), F.at(p).data(), dict.D);
      if (c > best_cos) {
        best_cos = c;
        best = k;
      }
    }
    out[p] = best;
  }
  return out;
}

ClusteringResult spherical_cluster_ml(std::span<const double> vectors, int dim, const ClusteringOptions& options) {
  const int K = options.K;
  if (dim <= 0 || K <= 0) throw InitError("clustering needs positive dimension and K");
  if (vectors.size() % dim != 0) throw ShapeError("vector data is not a multiple of the dimension");
  const std::size_t n = vectors.size() / dim;
  if (n < static_cast<std::size_t>(K))
    throw InitError("cannot initialize " + std::to_string(K) + " clusters from " + std::to_string(n) + " vectors");
  auto vec = [&](std::size_t i) { return vectors.data() + i * dim; };

  ClusteringResult r;
  r.K = K;
  r.dim = dim;
  r.centers.resize(static_cast<std::size_t>(K) * dim);
  auto center = [&](int k) { return r.centers.data() + static_cast<std::size_t>(k) * dim; };

  // Seed with K pairwise-distinct inputs drawn in a seeded random order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(options.seed);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  int chosen = 0;
  for (std::size_t idx : order) {
    if (chosen == K) break;
    const double* v = vec(idx);
    bool duplicate = false;
    for (int k = 0; k < chosen && !duplicate; ++k) duplicate = std::equal(v, v + dim, center(k));
    if (duplicate) continue;
    std::copy(v, v + dim, center(chosen));
    normalize_or_e1({center(chosen), static_cast<std::size_t>(dim)});
    ++chosen;
  }
  if (chosen < K)
    throw InitError("need at least " + std::to_string(K) + " distinct vectors, found " + std::to_string(chosen));

  r.assignments.assign(n, -1);
  std::vector<double> best_cos(n);
  auto assign = [&]() {
    bool changed = false;
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double bc = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < K; ++k) {
        const double c = dot(center(k), vec(i), dim);
        if (c > bc) {
          bc = c;
          best = k;
        }
      }
      if (r.assignments[i] != best) changed = true;
      r.assignments[i] = best;
      best_cos[i] = bc;
      objective += bc;
    }
    return std::pair{changed, objective};
  };

  auto [changed0, obj0] = assign();
  (void)changed0;
  r.objective.push_back(obj0);

  std::vector<double> sums(static_cast<std::size_t>(K) * dim);
  std::vector<int> counts(K);
  for (int it = 0; it < options.max_iters; ++it) {
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const int a = r.assignments[i];
      ++counts[a];
      double* s = sums.data() + static_cast<std::size_t>(a) * dim;
      const double* v = vec(i);
      for (int d = 0; d < dim; ++d) s[d] += v[d];
    }
    bool reseeded = false;
    std::vector<char> taken(n, 0);
    for (int k = 0; k < K; ++k) {
      double* c = center(k);
      if (counts[k] > 0) {
        const double* s = sums.data() + static_cast<std::size_t>(k) * dim;
        double sq = 0.0;
        for (int d = 0; d < dim; ++d) sq += s[d] * s[d];
        // A member sum that cancels to zero leaves the center where it was.
        if (std::sqrt(sq) >= kZeroNormEpsilon) {
          const double inv = 1.0 / std::sqrt(sq);
          for (int d = 0; d < dim; ++d) c[d] = s[d] * inv;
        }
        continue;
      }
      // Empty cluster: move it onto the input with the worst best-cosine.
      std::size_t worst = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (taken[i]) continue;
        if (worst == n || best_cos[i] < best_cos[worst]) worst = i;
      }
      if (worst == n) continue;
      taken[worst] = 1;
      std::copy(vec(worst), vec(worst) + dim, c);
      normalize_or_e1({c, static_cast<std::size_t>(dim)});
      reseeded = true;
    }
    auto [changed, obj] = assign();
    r.objective.push_back(obj);
    r.iterations = it + 1;
    if (!changed && !reseeded) {
      r.converged = true;
      break;
    }
  }
  return r;
}

VmfDictionary make_dictionary(const ClusteringResult& clusters, double sigma) {
  VmfDictionary d;
  d.K = clusters.K;
  d.D = clusters.dim;
  d.sigma = sigma;
  d.mu = clusters.centers;
  d.validate();
  return d;
}

}  // namespace compnet::vmf
