#pragma once

#include <span>
#include <vector>

namespace compnet {

/// H x W grid of unit-norm D-vectors, position-major (p = i * W + j).
struct FeatureMap {
  int H = 0;
  int W = 0;
  int D = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(int h, int w, int d) : H(h), W(w), D(d), data(static_cast<std::size_t>(h) * w * d, 0.0) {}

  int positions() const { return H * W; }
  std::span<const double> at(int p) const { return {data.data() + static_cast<std::size_t>(p) * D, static_cast<std::size_t>(D)}; }
  std::span<double> at(int p) { return {data.data() + static_cast<std::size_t>(p) * D, static_cast<std::size_t>(D)}; }
};

/// Pre-normalization norms below this map to the fallback direction e1.
inline constexpr double kZeroNormEpsilon = 1e-8;

/// Normalizes v in place; returns the original norm. Degenerate vectors
/// become e1.
double normalize_or_e1(std::span<double> v);

}  // namespace compnet
