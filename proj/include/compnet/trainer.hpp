#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "compnet/backbone.hpp"
#include "compnet/head.hpp"
#include "compnet/model.hpp"
#include "compnet/vmf.hpp"

namespace compnet::train {

struct TrainConfig {
  double gamma1 = 0.1;
  double gamma2 = 5.0;
  double gamma3 = 1.0;
  double lr = 0.01;
  double momentum = 0.9;
  int epochs = 60;
  std::uint64_t seed = 0;
  bool freeze_backbone = true;
  double prior_logodds = 0.0;
  int K = 64;
  int M = 4;
  int N = 5;
  double sigma = vmf::kDefaultSigma;
  double smoothing = 1e-2;  // Laplace epsilon on every frequency estimate
  int cluster_iters = 100;
  bool cluster_backgrounds = true;  // dictionary also clusters background features

  /// Throws DomainError on negative lr, gammas or epochs, or
  /// non-positive model sizes. epochs == 0 is allowed (initialization only).
  void validate() const;
};

/// snake_case JSON, unknown keys rejected. Missing keys keep their defaults.
TrainConfig config_from_json(const std::string& text, TrainConfig base = {});
std::string config_to_json(const TrainConfig& config);

struct LossTerms {
  double total = 0.0;
  double l_class = 0.0;
  double l_weight = 0.0;
  double l_vmf = 0.0;
  double l_mix = 0.0;
};

struct Gradients {
  std::vector<double> projection;  // [D, C]; empty when the backbone is frozen
  std::vector<double> mu;          // [K, D]
  std::vector<double> logits;      // [Y, M, H, W, K]
};

/// Forward pass with everything the backward pass needs. Discrete choices
/// (winning mixture, occlusion map, occluder and kernel argmaxes) are fixed
/// by the forward pass and held constant by backward().
class LossEvaluator {
 public:
  LossEvaluator(const CompNetModel& model, const TrainConfig& config);

  /// Runs the backbone; enables the projection gradient unless frozen.
  LossTerms forward(const Image& image, int label);
  /// Uses precomputed features; no projection gradient.
  LossTerms forward(const FeatureMap& features, int label);

  /// Throws StateError when no forward pass has been run.
  Gradients backward() const;

  const head::InferenceResult& inference() const;
  const FeatureMap& features() const { return features_; }

 private:
  LossTerms run(int label);

  const CompNetModel& model_;
  const TrainConfig& config_;
  bool has_forward_ = false;
  bool has_backbone_cache_ = false;
  int label_ = 0;
  FeatureMap features_;
  backbone::BackboneCache cache_;
  vmf::LikelihoodTensor likelihood_;
  head::InferenceResult inference_;
  std::vector<double> probabilities_;
};

LossTerms total_loss(const FeatureMap& features, int label, const CompNetModel& model, const TrainConfig& config);

/// Class-conditional spatial mixtures from count-based ML on hard vMF
/// assignments; images of each class are grouped into M mixtures by cosine
/// k-means over their one-hot assignment maps.
head::MixtureBank init_mixtures(std::span<const FeatureMap> features, std::span<const int> labels, int num_classes,
                                const vmf::VmfDictionary& dict, const TrainConfig& config);

/// Occluder models from background images: each image becomes a normalized
/// kernel-assignment histogram, histograms are clustered into N groups and
/// every beta_n is the smoothed group mean.
head::OccluderBank learn_occluder_models(std::span<const FeatureMap> backgrounds, const vmf::VmfDictionary& dict,
                                         int N, std::uint64_t seed, double smoothing, int max_iters = 100);

/// Clustering-based initialization of mu, the mixtures and the occluders.
CompNetModel init_model(const backbone::BackboneParams& backbone, std::span<const Image> images,
                        std::span<const int> labels, std::span<const Image> backgrounds, const TrainConfig& config);

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double l_class = 0.0;
  double l_weight = 0.0;
  double l_vmf = 0.0;
  double l_mix = 0.0;
  double train_accuracy = 0.0;
};

struct TrainState {
  CompNetModel model;
  std::vector<double> velocity_projection;
  std::vector<double> velocity_mu;
  std::vector<double> velocity_logits;
  int epoch = 0;
  std::vector<EpochLog> log;

  explicit TrainState(CompNetModel m);
};

/// One SGD-with-momentum step: v <- momentum*v - lr*g; theta <- theta + v.
/// Kernels that moved are projected back onto the unit sphere afterwards.
void apply_update(TrainState& state, const Gradients& grads, const TrainConfig& config);

using EpochCallback = std::function<void(const EpochLog&)>;

/// Per-image SGD over shuffled epochs. Throws DivergenceError on a
/// non-finite loss.
TrainState train(CompNetModel model, std::span<const Image> images, std::span<const int> labels,
                 const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Fraction of images whose predicted class matches the label.
double accuracy(const CompNetModel& model, std::span<const Image> images, std::span<const int> labels);

void write_training_log(const std::vector<EpochLog>& log, const std::filesystem::path& path);

}  // namespace compnet::train
