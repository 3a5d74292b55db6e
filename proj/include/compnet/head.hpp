#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "compnet/feature_map.hpp"
#include "compnet/vmf.hpp"

namespace compnet::head {

/// H x W scalar field, row-major.
struct Plane {
  int H = 0;
  int W = 0;
  std::vector<double> values;

  Plane() = default;
  Plane(int h, int w, double fill = 0.0) : H(h), W(w), values(static_cast<std::size_t>(h) * w, fill) {}
  int positions() const { return H * W; }
  double& operator[](int p) { return values[p]; }
  double operator[](int p) const { return values[p]; }
  bool operator==(const Plane&) const = default;
};

/// Per-class, per-mixture spatial coefficient maps. Stored as unconstrained
/// logits; the coefficients are softmax(logits) over k at every (y, m, p).
struct MixtureBank {
  int Y = 0;
  int M = 0;
  int H = 0;
  int W = 0;
  int K = 0;
  std::vector<double> logits;  // [Y, M, H, W, K]

  MixtureBank() = default;
  MixtureBank(int y, int m, int h, int w, int k)
      : Y(y), M(m), H(h), W(w), K(k), logits(static_cast<std::size_t>(y) * m * h * w * k, 0.0) {}

  std::size_t map_size() const { return static_cast<std::size_t>(H) * W * K; }
  std::span<const double> logit_map(int y, int m) const {
    return {logits.data() + (static_cast<std::size_t>(y) * M + m) * map_size(), map_size()};
  }
  std::span<double> logit_map(int y, int m) {
    return {logits.data() + (static_cast<std::size_t>(y) * M + m) * map_size(), map_size()};
  }
  /// log alpha for (y, m): the log-softmax of the logits over k.
  std::vector<double> log_coefficients(int y, int m) const;

  bool operator==(const MixtureBank&) const = default;
};

/// Position-independent occluder mixtures over the kernels (log domain)
/// and the log-odds of the occlusion prior, log p(z=1) - log(1 - p(z=1)).
struct OccluderBank {
  int N = 0;
  int K = 0;
  std::vector<double> log_beta;  // [N, K], each row log-normalized
  double prior_logodds = 0.0;

  std::span<const double> row(int n) const {
    return {log_beta.data() + static_cast<std::size_t>(n) * K, static_cast<std::size_t>(K)};
  }
  bool operator==(const OccluderBank&) const = default;
};

/// Numerically stable log(sum_k exp(a_k + b_k)).
double log_sum_exp_sum(std::span<const double> a, std::span<const double> b);
/// Log-softmax of one vector into out.
void log_softmax(std::span<const double> logits, std::span<double> out);

/// E_p = log sum_k alpha_{p,k} L_{p,k}, with log_alpha laid out [H, W, K].
Plane mixture_log_likelihood_plane(const vmf::LikelihoodTensor& L, std::span<const double> log_alpha);

struct OccluderPlane {
  Plane O;                    // includes prior_logodds
  std::vector<int> occluder;  // maximizing occluder model per position
};
OccluderPlane occluder_log_likelihood_plane(const vmf::LikelihoodTensor& L, const OccluderBank& occ);

struct RobustScore {
  double score = 0.0;
  std::vector<std::uint8_t> occluded;  // Z_p = O_p > E_p
};
/// s = sum_p max(E_p, O_p); ties count as not occluded.
RobustScore robust_score(const Plane& E, const Plane& O);

struct InferenceResult {
  std::vector<double> scores;                 // s_y
  std::vector<std::vector<double>> mixture_scores;  // s^m_y
  int predicted = 0;                          // argmax_y s_y
  std::vector<int> best_mixture;              // m*_y
  std::vector<std::uint8_t> occlusion_map;    // Z at (predicted, m*)
  Plane occlusion_scores;                     // log-ratio map at (predicted, m*)
  std::vector<int> occluder_index;            // argmax_n per position
  std::vector<Plane> mixture_planes;          // E^m_y at index y*M + m
  Plane occluder_plane;                       // O
  int H = 0;
  int W = 0;
  int M = 0;

  const Plane& mixture_plane(int y, int m) const { return mixture_planes[static_cast<std::size_t>(y) * M + m]; }
};

InferenceResult infer_from_likelihood(const vmf::LikelihoodTensor& L, const MixtureBank& mixtures,
                                      const OccluderBank& occluders);
InferenceResult infer(const FeatureMap& F, const vmf::VmfDictionary& dict, const MixtureBank& mixtures,
                      const OccluderBank& occluders);

/// Occluder-vs-object log-likelihood ratio per position for (y, m), with the
/// occlusion prior folded in as a log-odds offset. Positive means occluded.
Plane occlusion_score_map(const vmf::LikelihoodTensor& L, const MixtureBank& mixtures, const OccluderBank& occluders,
                          int y, int m);

/// 3x3 median with clamped borders.
Plane median_filter_3x3(const Plane& plane);

}  // namespace compnet::head
