#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "compnet/feature_map.hpp"
#include "compnet/image.hpp"

namespace compnet::backbone {

struct BackboneConfig {
  int num_filters = 16;  // C
  int kernel_size = 5;   // k
  int stride = 1;        // s
  int pool_size = 2;
  int feature_dim = 16;  // D
  std::uint64_t seed = 7;
};

/// Fixed convolution bank followed by ReLU, average pooling and a trainable
/// D x C projection (omega). The filter bank never changes after construction.
class BackboneParams {
 public:
  BackboneParams() = default;
  /// Seeded random filters and projection.
  explicit BackboneParams(const BackboneConfig& config);
  /// Explicit filters [C*k*k] and projection [D*C].
  BackboneParams(int num_filters, int kernel_size, int stride, int pool_size, int feature_dim,
                 std::vector<double> filters, std::vector<double> projection);

  int num_filters() const { return num_filters_; }
  int kernel_size() const { return kernel_size_; }
  int stride() const { return stride_; }
  int pool_size() const { return pool_size_; }
  int feature_dim() const { return feature_dim_; }

  std::span<const double> filters() const { return filters_; }
  std::span<const double> projection() const { return projection_; }
  std::span<double> projection() { return projection_; }

  /// Feature grid size for an image of the given size; throws ShapeError
  /// when the image is smaller than one receptive field.
  std::pair<int, int> output_shape(int image_height, int image_width) const;

  bool operator==(const BackboneParams&) const = default;

 private:
  int num_filters_ = 0;
  int kernel_size_ = 0;
  int stride_ = 1;
  int pool_size_ = 1;
  int feature_dim_ = 0;
  std::vector<double> filters_;
  std::vector<double> projection_;
};

/// Intermediate values kept for the projection gradient.
struct BackboneCache {
  int H = 0;
  int W = 0;
  std::vector<double> pooled;  // [H*W, C] pooled ReLU responses
  std::vector<double> norms;   // [H*W] pre-normalization norms
};

FeatureMap extract_features(const Image& img, const BackboneParams& params);
FeatureMap extract_features(const Image& img, const BackboneParams& params, BackboneCache& cache);

/// Accumulates dL/d(omega) into grad_projection [D*C] given dL/df for every
/// position. Positions that fell back to e1 contribute nothing.
void accumulate_projection_gradient(const BackboneCache& cache, const FeatureMap& features,
                                    std::span<const double> grad_features, const BackboneParams& params,
                                    std::span<double> grad_projection);

/// Rank-3 CTNS [H, W, D]; vectors are re-normalized on load.
FeatureMap load_feature_map(const std::filesystem::path& path);
void save_feature_map(const FeatureMap& f, const std::filesystem::path& path);

}  // namespace compnet::backbone
