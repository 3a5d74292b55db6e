#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "compnet/feature_map.hpp"

namespace compnet::vmf {

inline constexpr double kDefaultSigma = 30.0;

/// K unit-norm mean directions sharing one concentration. The vMF
/// normalizer depends only on sigma and is left out of every density.
struct VmfDictionary {
  int K = 0;
  int D = 0;
  double sigma = kDefaultSigma;
  std::vector<double> mu;  // [K, D]

  std::span<const double> kernel(int k) const {
    return {mu.data() + static_cast<std::size_t>(k) * D, static_cast<std::size_t>(D)};
  }
  std::span<double> kernel(int k) { return {mu.data() + static_cast<std::size_t>(k) * D, static_cast<std::size_t>(D)}; }

  /// Throws unless every kernel is unit-norm (1e-6) and sigma > 0.
  void validate() const;
  /// Re-projects every kernel onto the unit sphere.
  void renormalize();

  bool operator==(const VmfDictionary&) const = default;
};

/// sigma * mu_k . f. Throws DomainError when |f| deviates from 1 by > 1e-3.
double vmf_log_density(std::span<const double> f, int k, const VmfDictionary& dict);

/// Per-position, per-kernel log-likelihoods sigma * mu_k . f_p, plus a
/// scalar log-offset shared by every entry (the dropped -log Z(sigma)).
/// Entries are values[p*K + k] + log_offset.
struct LikelihoodTensor {
  int H = 0;
  int W = 0;
  int K = 0;
  std::vector<double> values;
  double log_offset = 0.0;

  int positions() const { return H * W; }
  std::span<const double> at(int p) const {
    return {values.data() + static_cast<std::size_t>(p) * K, static_cast<std::size_t>(K)};
  }
  double entry(int p, int k) const { return values[static_cast<std::size_t>(p) * K + k] + log_offset; }
  /// Adds c to every log-likelihood entry.
  void shift(double c) { log_offset += c; }
};

/// The 1x1 convolution of F with every mu_k, scaled by sigma.
LikelihoodTensor compute_likelihood_tensor(const FeatureMap& F, const VmfDictionary& dict);

/// Nearest kernel by cosine for every position (lowest index on ties).
std::vector<int> hard_assignments(const FeatureMap& F, const VmfDictionary& dict);

struct ClusteringOptions {
  int K = 0;
  std::uint64_t seed = 0;
  int max_iters = 100;
};

struct ClusteringResult {
  int K = 0;
  int dim = 0;
  std::vector<double> centers;       // [K, dim], unit-norm
  std::vector<int> assignments;      // per input vector
  std::vector<double> objective;     // sum_i max_k mu_k . x_i after each iteration; [0] at initialization
  int iterations = 0;
  bool converged = false;
};

/// Hard-assignment spherical k-means: assign each vector to its nearest
/// center by cosine, then set each center to the normalized sum of its
/// members. Empty clusters are re-seeded at the worst-explained input.
/// `vectors` holds n unit vectors of length `dim`.
ClusteringResult spherical_cluster_ml(std::span<const double> vectors, int dim, const ClusteringOptions& options);

VmfDictionary make_dictionary(const ClusteringResult& clusters, double sigma);

}  // namespace compnet::vmf
