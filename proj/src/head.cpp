#include "compnet/head.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "compnet/errors.hpp"

namespace compnet::head {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_same(const Plane& a, const Plane& b) {
  if (a.H != b.H || a.W != b.W || a.values.size() != b.values.size()) throw ShapeError("plane shapes differ");
}

// Offset-free mixture plane: the likelihood tensor's log_offset is left out
// so that decisions and log-ratios never see it.
Plane mixture_plane_raw(const vmf::LikelihoodTensor& L, std::span<const double> log_alpha) {
  if (log_alpha.size() != L.values.size())
    throw ShapeError("coefficient map holds " + std::to_string(log_alpha.size()) + " entries, likelihood tensor " +
                     std::to_string(L.values.size()));
  Plane E(L.H, L.W);
  for (int p = 0; p < L.positions(); ++p)
    E[p] = log_sum_exp_sum(log_alpha.subspan(static_cast<std::size_t>(p) * L.K, L.K), L.at(p));
  return E;
}

OccluderPlane occluder_plane_raw(const vmf::LikelihoodTensor& L, const OccluderBank& occ) {
  if (occ.K != L.K || occ.N <= 0 || occ.log_beta.size() != static_cast<std::size_t>(occ.N) * occ.K)
    throw ShapeError("occluder bank does not match the likelihood tensor");
  OccluderPlane out{Plane(L.H, L.W), std::vector<int>(L.positions(), 0)};
  for (int p = 0; p < L.positions(); ++p) {
    double best = kNegInf;
    int best_n = 0;
    for (int n = 0; n < occ.N; ++n) {
      const double v = log_sum_exp_sum(occ.row(n), L.at(p));
      if (v > best) {
        best = v;
        best_n = n;
      }
    }
    out.O[p] = best + occ.prior_logodds;
    out.occluder[p] = best_n;
  }
  return out;
}

void check_bank(const MixtureBank& mixtures, const vmf::LikelihoodTensor& L) {
  if (mixtures.H != L.H || mixtures.W != L.W || mixtures.K != L.K)
    throw ShapeError("mixture bank geometry " + std::to_string(mixtures.H) + "x" + std::to_string(mixtures.W) + "x" +
                     std::to_string(mixtures.K) + " does not match likelihood tensor " + std::to_string(L.H) + "x" +
                     std::to_string(L.W) + "x" + std::to_string(L.K));
  if (mixtures.Y <= 0 || mixtures.M <= 0) throw ShapeError("mixture bank is empty");
}

}  // namespace

double log_sum_exp_sum(std::span<const double> a, std::span<const double> b) {
  double m = kNegInf;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, a[k] + b[k]);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += std::exp(a[k] + b[k] - m);
  return m + std::log(s);
}

void log_softmax(std::span<const double> logits, std::span<double> out) {
  double m = kNegInf;
  for (double x : logits) m = std::max(m, x);
  double s = 0.0;
  for (double x : logits) s += std::exp(x - m);
  const double lse = m + std::log(s);
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - lse;
}

std::vector<double> MixtureBank::log_coefficients(int y, int m) const {
  if (y < 0 || y >= Y || m < 0 || m >= M) throw IndexError("mixture index out of range");
  const auto src = logit_map(y, m);
  std::vector<double> out(src.size());
  for (std::size_t off = 0; off < src.size(); off += K)
    log_softmax(src.subspan(off, K), std::span<double>(out).subspan(off, K));
  return out;
}

Plane mixture_log_likelihood_plane(const vmf::LikelihoodTensor& L, std::span<const double> log_alpha) {
  Plane E = mixture_plane_raw(L, log_alpha);
  if (L.log_offset != 0.0)
    for (double& v : E.values) v += L.log_offset;
  return E;
}

OccluderPlane occluder_log_likelihood_plane(const vmf::LikelihoodTensor& L, const OccluderBank& occ) {
  OccluderPlane out = occluder_plane_raw(L, occ);
  if (L.log_offset != 0.0)
    for (double& v : out.O.values) v += L.log_offset;
  return out;
}

RobustScore robust_score(const Plane& E, const Plane& O) {
  check_same(E, O);
  RobustScore r;
  r.occluded.assign(E.values.size(), 0);
  for (std::size_t p = 0; p < E.values.size(); ++p) {
    if (O.values[p] > E.values[p]) {
      r.occluded[p] = 1;
      r.score += O.values[p];
    } else {
      r.score += E.values[p];
    }
  }
  return r;
}

InferenceResult infer_from_likelihood(const vmf::LikelihoodTensor& L, const MixtureBank& mixtures,
                                      const OccluderBank& occluders) {
  check_bank(mixtures, L);
  InferenceResult r;
  r.H = L.H;
  r.W = L.W;
  r.M = mixtures.M;
  const int Y = mixtures.Y;
  const int M = mixtures.M;
  const double offset_total = L.log_offset * L.positions();

  auto occ = occluder_plane_raw(L, occluders);
  r.occluder_index = occ.occluder;
  r.scores.assign(Y, 0.0);
  r.mixture_scores.assign(Y, std::vector<double>(M, 0.0));
  r.best_mixture.assign(Y, 0);
  r.mixture_planes.reserve(static_cast<std::size_t>(Y) * M);

  std::vector<double> raw_class(Y, kNegInf);
  std::vector<RobustScore> best_robust(Y);
  for (int y = 0; y < Y; ++y) {
    for (int m = 0; m < M; ++m) {
      Plane E = mixture_plane_raw(L, mixtures.log_coefficients(y, m));
      RobustScore rs = robust_score(E, occ.O);
      r.mixture_scores[y][m] = rs.score + offset_total;
      if (rs.score > raw_class[y]) {
        raw_class[y] = rs.score;
        r.best_mixture[y] = m;
        best_robust[y] = std::move(rs);
      }
      if (L.log_offset != 0.0)
        for (double& v : E.values) v += L.log_offset;
      r.mixture_planes.push_back(std::move(E));
    }
    r.scores[y] = raw_class[y] + offset_total;
  }
  r.predicted = static_cast<int>(std::max_element(raw_class.begin(), raw_class.end()) - raw_class.begin());
  r.occlusion_map = best_robust[r.predicted].occluded;

  const int m_star = r.best_mixture[r.predicted];
  r.occlusion_scores = Plane(L.H, L.W);
  // Recomputed from the offset-free plane so the ratio is exactly shift-free.
  const Plane E_raw = mixture_plane_raw(L, mixtures.log_coefficients(r.predicted, m_star));
  for (int p = 0; p < L.positions(); ++p) r.occlusion_scores[p] = occ.O[p] - E_raw[p];

  r.occluder_plane = std::move(occ.O);
  if (L.log_offset != 0.0)
    for (double& v : r.occluder_plane.values) v += L.log_offset;
  return r;
}

InferenceResult infer(const FeatureMap& F, const vmf::VmfDictionary& dict, const MixtureBank& mixtures,
                      const OccluderBank& occluders) {
  return infer_from_likelihood(vmf::compute_likelihood_tensor(F, dict), mixtures, occluders);
}

Plane occlusion_score_map(const vmf::LikelihoodTensor& L, const MixtureBank& mixtures, const OccluderBank& occluders,
                          int y, int m) {
  if (y < 0 || y >= mixtures.Y) throw IndexError("class index " + std::to_string(y) + " out of range");
  if (m < 0 || m >= mixtures.M) throw IndexError("mixture index " + std::to_string(m) + " out of range");
  check_bank(mixtures, L);
  const Plane E = mixture_plane_raw(L, mixtures.log_coefficients(y, m));
  const auto occ = occluder_plane_raw(L, occluders);
  Plane out(L.H, L.W);
  for (int p = 0; p < L.positions(); ++p) out[p] = occ.O[p] - E[p];
  return out;
}

Plane median_filter_3x3(const Plane& plane) {
  Plane out(plane.H, plane.W);
  double window[9];
  for (int i = 0; i < plane.H; ++i) {
    for (int j = 0; j < plane.W; ++j) {
      int n = 0;
      for (int di = -1; di <= 1; ++di) {
        const int ii = std::clamp(i + di, 0, plane.H - 1);
        for (int dj = -1; dj <= 1; ++dj) {
          const int jj = std::clamp(j + dj, 0, plane.W - 1);
          window[n++] = plane.values[static_cast<std::size_t>(ii) * plane.W + jj];
        }
      }
      std::nth_element(window, window + 4, window + 9);
      out.values[static_cast<std::size_t>(i) * plane.W + j] = window[4];
    }
  }
  return out;
}

}  // namespace compnet::head
