#include "compnet/backbone.hpp"

#include <cmath>
#include <random>
#include <string>

#include "compnet/errors.hpp"
#include "compnet/tensor.hpp"

namespace compnet {

double normalize_or_e1(std::span<double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm < kZeroNormEpsilon) {
    std::fill(v.begin(), v.end(), 0.0);
    if (!v.empty()) v[0] = 1.0;
    return norm;
  }
  for (double& x : v) x /= norm;
  return norm;
}

}  // namespace compnet

namespace compnet::backbone {

BackboneParams::BackboneParams(const BackboneConfig& config)
    : num_filters_(config.num_filters),
      kernel_size_(config.kernel_size),
      stride_(config.stride),
      pool_size_(config.pool_size),
      feature_dim_(config.feature_dim) {
  if (num_filters_ <= 0 || kernel_size_ <= 0 || stride_ <= 0 || pool_size_ <= 0 || feature_dim_ <= 0)
    throw ShapeError("backbone hyperparameters must be positive");
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  const int taps = kernel_size_ * kernel_size_;
  filters_.resize(static_cast<std::size_t>(num_filters_) * taps);
  for (int c = 0; c < num_filters_; ++c) {
    std::span<double> w(filters_.data() + static_cast<std::size_t>(c) * taps, taps);
    if (c % 2 == 1) {
      // sign-flipped copy of the previous filter, so ReLU keeps both polarities
      for (int t = 0; t < taps; ++t) w[t] = -filters_[static_cast<std::size_t>(c - 1) * taps + t];
      continue;
    }
    double mean = 0.0;
    for (double& x : w) {
      x = normal(rng);
      mean += x;
    }
    mean /= taps;
    double sq = 0.0;
    for (double& x : w) {
      x -= mean;
      sq += x * x;
    }
    const double norm = std::sqrt(sq);
    for (double& x : w) x /= norm;
  }

  std::normal_distribution<double> proj(0.0, 1.0 / std::sqrt(static_cast<double>(num_filters_)));
  projection_.resize(static_cast<std::size_t>(feature_dim_) * num_filters_);
  for (double& x : projection_) x = proj(rng);
}

BackboneParams::BackboneParams(int num_filters, int kernel_size, int stride, int pool_size, int feature_dim,
                               std::vector<double> filters, std::vector<double> projection)
    : num_filters_(num_filters),
      kernel_size_(kernel_size),
      stride_(stride),
      pool_size_(pool_size),
      feature_dim_(feature_dim),
      filters_(std::move(filters)),
      projection_(std::move(projection)) {
  if (num_filters_ <= 0 || kernel_size_ <= 0 || stride_ <= 0 || pool_size_ <= 0 || feature_dim_ <= 0)
    throw ShapeError("backbone hyperparameters must be positive");
  if (filters_.size() != static_cast<std::size_t>(num_filters_) * kernel_size_ * kernel_size_)
    throw ShapeError("filter bank size does not match C*k*k");
  if (projection_.size() != static_cast<std::size_t>(feature_dim_) * num_filters_)
    throw ShapeError("projection size does not match D*C");
  for (double x : projection_)
    if (!std::isfinite(x)) throw DomainError("projection must be finite");
}

std::pair<int, int> BackboneParams::output_shape(int image_height, int image_width) const {
  if (image_height < kernel_size_ || image_width < kernel_size_)
    throw ShapeError("image " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                     " is smaller than one receptive field");
  const int conv_h = (image_height - kernel_size_) / stride_ + 1;
  const int conv_w = (image_width - kernel_size_) / stride_ + 1;
  const int h = conv_h / pool_size_;
  const int w = conv_w / pool_size_;
  if (h < 1 || w < 1)
    throw ShapeError("image " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                     " yields an empty feature map");
  return {h, w};
}

FeatureMap extract_features(const Image& img, const BackboneParams& params) {
  BackboneCache cache;
  return extract_features(img, params, cache);
}

FeatureMap extract_features(const Image& img, const BackboneParams& params, BackboneCache& cache) {
  const auto [H, W] = params.output_shape(img.height, img.width);
  const int C = params.num_filters();
  const int k = params.kernel_size();
  const int s = params.stride();
  const int pool = params.pool_size();
  const int D = params.feature_dim();
  const auto filters = params.filters();
  const auto omega = params.projection();

  std::vector<double> lum(static_cast<std::size_t>(img.height) * img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) lum[static_cast<std::size_t>(y) * img.width + x] = img.luminance(y, x);

  cache.H = H;
  cache.W = W;
  cache.pooled.assign(static_cast<std::size_t>(H) * W * C, 0.0);
  cache.norms.assign(static_cast<std::size_t>(H) * W, 0.0);

  const double inv_pool = 1.0 / (pool * pool);
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      double* h = cache.pooled.data() + (static_cast<std::size_t>(i) * W + j) * C;
      for (int c = 0; c < C; ++c) {
        const double* w = filters.data() + static_cast<std::size_t>(c) * k * k;
        double acc = 0.0;
        for (int a = 0; a < pool; ++a) {
          for (int b = 0; b < pool; ++b) {
            const int oy = (i * pool + a) * s;
            const int ox = (j * pool + b) * s;
            double r = 0.0;
            for (int u = 0; u < k; ++u) {
              const double* row = lum.data() + static_cast<std::size_t>(oy + u) * img.width + ox;
              for (int v = 0; v < k; ++v) r += w[u * k + v] * row[v];
            }
            acc += r > 0.0 ? r : 0.0;
          }
        }
        h[c] = acc * inv_pool;
      }
    }
  }

  FeatureMap f(H, W, D);
  for (int p = 0; p < H * W; ++p) {
    const double* h = cache.pooled.data() + static_cast<std::size_t>(p) * C;
    auto out = f.at(p);
    for (int d = 0; d < D; ++d) {
      double x = 0.0;
      for (int c = 0; c < C; ++c) x += omega[static_cast<std::size_t>(d) * C + c] * h[c];
      out[d] = x;
    }
    cache.norms[p] = normalize_or_e1(out);
  }
  return f;
}

void accumulate_projection_gradient(const BackboneCache& cache, const FeatureMap& features,
                                    std::span<const double> grad_features, const BackboneParams& params,
                                    std::span<double> grad_projection) {
  const int C = params.num_filters();
  const int D = params.feature_dim();
  if (features.D != D || grad_features.size() != features.data.size() ||
      grad_projection.size() != static_cast<std::size_t>(D) * C ||
      cache.norms.size() != static_cast<std::size_t>(features.positions()))
    throw ShapeError("projection gradient shape mismatch");
  std::vector<double> gx(D);
  for (int p = 0; p < features.positions(); ++p) {
    const double norm = cache.norms[p];
    if (norm < kZeroNormEpsilon) continue;
    const auto f = features.at(p);
    const double* g = grad_features.data() + static_cast<std::size_t>(p) * D;
    // d normalize(x) / dx = (I - f f^T) / |x|
    double fg = 0.0;
    for (int d = 0; d < D; ++d) fg += f[d] * g[d];
    for (int d = 0; d < D; ++d) gx[d] = (g[d] - f[d] * fg) / norm;
    const double* h = cache.pooled.data() + static_cast<std::size_t>(p) * C;
    for (int d = 0; d < D; ++d)
      for (int c = 0; c < C; ++c) grad_projection[static_cast<std::size_t>(d) * C + c] += gx[d] * h[c];
  }
}

FeatureMap load_feature_map(const std::filesystem::path& path) {
  const Tensor t = read_tensor(path);
  if (t.rank() != 3)
    throw FormatError(path.string() + ": feature map must be rank 3 [H, W, D], got rank " + std::to_string(t.rank()));
  FeatureMap f(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]), static_cast<int>(t.dims[2]));
  for (std::size_t i = 0; i < t.data.size(); ++i) f.data[i] = t.data[i];
  for (int p = 0; p < f.positions(); ++p) normalize_or_e1(f.at(p));
  return f;
}

void save_feature_map(const FeatureMap& f, const std::filesystem::path& path) {
  write_tensor(to_tensor({static_cast<std::uint32_t>(f.H), static_cast<std::uint32_t>(f.W),
                          static_cast<std::uint32_t>(f.D)},
                         f.data),
               path);
}

}  // namespace compnet::backbone
