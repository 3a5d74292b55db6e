#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "compnet/backbone.hpp"
#include "compnet/feature_map.hpp"
#include "compnet/head.hpp"
#include "compnet/model.hpp"
#include "compnet/trainer.hpp"
#include "compnet/vmf.hpp"

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::vector<double> random_unit(std::mt19937_64& rng, int dim);
compnet::Image random_image(std::mt19937_64& rng, int h, int w);
compnet::FeatureMap random_feature_map(std::mt19937_64& rng, int H, int W, int D);
compnet::vmf::VmfDictionary random_dictionary(std::mt19937_64& rng, int K, int D, double sigma = 30.0);
compnet::head::MixtureBank random_mixtures(std::mt19937_64& rng, int Y, int M, int H, int W, int K, double scale = 2.0);
compnet::head::OccluderBank random_occluders(std::mt19937_64& rng, int N, int K, double prior_logodds = 0.0);

/// Tiny end-to-end model on 8x8 images: C=6 filters of 3x3, pool 2, D=4,
/// giving a 3x3 feature grid; K=5, Y=2, M=2, N=2.
compnet::CompNetModel tiny_model(std::uint64_t seed);

/// Worst relative error |analytic - numeric| / max(|analytic|, |numeric|, 1e-6)
/// per trainable tensor under the five-point central difference with step h.
/// Coordinates whose perturbation flips any discrete choice of the forward
/// pass (winning mixture, occlusion switch, occluder or kernel argmax) are
/// skipped.
struct GradientCheck {
  double mu = 0.0;
  double logits = 0.0;
  double projection = 0.0;
  int checked = 0;
  int skipped = 0;
};
GradientCheck check_gradients(const compnet::CompNetModel& model, const compnet::Image& image, int label,
                              const compnet::train::TrainConfig& config, double h);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

// Naive reference implementations, evaluated in long double.
std::vector<long double> naive_likelihood(const compnet::FeatureMap& F, const compnet::vmf::VmfDictionary& dict);
std::vector<long double> naive_mixture_plane(const std::vector<long double>& L, int P, int K,
                                             const std::vector<double>& logits_yxk);
std::vector<long double> naive_occluder_plane(const std::vector<long double>& L, int P, int K,
                                              const compnet::head::OccluderBank& occ);

}  // namespace testing
