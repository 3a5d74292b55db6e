#include "compnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "compnet/errors.hpp"

namespace compnet::train {

namespace {

using json = nlohmann::ordered_json;

double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

bool occluded(const head::Plane& E, const head::Plane& O, int p) { return O[p] > E[p]; }

int argmax_kernel(const FeatureMap& F, const vmf::VmfDictionary& dict, int p, double* best_dot) {
  int best = 0;
  double bd = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < dict.K; ++k) {
    const double c = dot(dict.kernel(k).data(), F.at(p).data(), dict.D);
    if (c > bd) {
      bd = c;
      best = k;
    }
  }
  if (best_dot) *best_dot = bd;
  return best;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw DomainError("lr must be non-negative");
  if (gamma1 < 0.0 || gamma2 < 0.0 || gamma3 < 0.0) throw DomainError("loss weights must be non-negative");
  if (momentum < 0.0 || momentum >= 1.0) throw DomainError("momentum must lie in [0, 1)");
  if (epochs < 0) throw DomainError("epochs must be non-negative");
  if (K <= 0 || M <= 0 || N <= 0) throw DomainError("K, M and N must be positive");
  if (!(sigma > 0.0)) throw DomainError("sigma must be positive");
  if (!(smoothing > 0.0)) throw DomainError("smoothing must be positive");
  if (cluster_iters <= 0) throw DomainError("cluster_iters must be positive");
}

TrainConfig config_from_json(const std::string& text, TrainConfig c) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("train config: expected a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "gamma1") c.gamma1 = v.get<double>();
      else if (key == "gamma2") c.gamma2 = v.get<double>();
      else if (key == "gamma3") c.gamma3 = v.get<double>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "momentum") c.momentum = v.get<double>();
      else if (key == "epochs") c.epochs = v.get<int>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "freeze_backbone") c.freeze_backbone = v.get<bool>();
      else if (key == "prior_logodds") c.prior_logodds = v.get<double>();
      else if (key == "k") c.K = v.get<int>();
      else if (key == "m") c.M = v.get<int>();
      else if (key == "n") c.N = v.get<int>();
      else if (key == "sigma") c.sigma = v.get<double>();
      else if (key == "smoothing") c.smoothing = v.get<double>();
      else if (key == "cluster_iters") c.cluster_iters = v.get<int>();
      else if (key == "cluster_backgrounds") c.cluster_backgrounds = v.get<bool>();
      else throw FormatError("train config: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
  return c;
}

std::string config_to_json(const TrainConfig& c) {
  json j;
  j["gamma1"] = c.gamma1;
  j["gamma2"] = c.gamma2;
  j["gamma3"] = c.gamma3;
  j["lr"] = c.lr;
  j["momentum"] = c.momentum;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["freeze_backbone"] = c.freeze_backbone;
  j["prior_logodds"] = c.prior_logodds;
  j["k"] = c.K;
  j["m"] = c.M;
  j["n"] = c.N;
  j["sigma"] = c.sigma;
  j["smoothing"] = c.smoothing;
  j["cluster_iters"] = c.cluster_iters;
  j["cluster_backgrounds"] = c.cluster_backgrounds;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Loss and gradients

LossEvaluator::LossEvaluator(const CompNetModel& model, const TrainConfig& config) : model_(model), config_(config) {}

LossTerms LossEvaluator::forward(const Image& image, int label) {
  features_ = backbone::extract_features(image, model_.backbone, cache_);
  has_backbone_cache_ = true;
  return run(label);
}

LossTerms LossEvaluator::forward(const FeatureMap& features, int label) {
  features_ = features;
  has_backbone_cache_ = false;
  return run(label);
}

const head::InferenceResult& LossEvaluator::inference() const {
  if (!has_forward_) throw StateError("no forward pass has been run");
  return inference_;
}

LossTerms LossEvaluator::run(int label) {
  const int Y = model_.mixtures.Y;
  if (label < 0 || label >= Y) throw IndexError("label " + std::to_string(label) + " out of range");
  label_ = label;
  likelihood_ = vmf::compute_likelihood_tensor(features_, model_.dict);
  inference_ = head::infer_from_likelihood(likelihood_, model_.mixtures, model_.occluders);

  LossTerms t;
  const double P = likelihood_.positions();
  std::vector<double> logits(Y);
  for (int y = 0; y < Y; ++y) logits[y] = inference_.scores[y] / P;
  probabilities_.resize(Y);
  head::log_softmax(logits, probabilities_);
  t.l_class = -probabilities_[label];
  for (double& q : probabilities_) q = std::exp(q);

  for (double w : model_.backbone.projection()) t.l_weight += w * w;

  for (int p = 0; p < features_.positions(); ++p) {
    double best = 0.0;
    argmax_kernel(features_, model_.dict, p, &best);
    t.l_vmf -= best;
  }

  const int m_up = inference_.best_mixture[label];
  const auto& E = inference_.mixture_plane(label, m_up);
  const auto& O = inference_.occluder_plane;
  for (int p = 0; p < E.positions(); ++p)
    if (!occluded(E, O, p)) t.l_mix -= E[p];

  t.total = t.l_class + config_.gamma1 * t.l_weight + config_.gamma2 * t.l_vmf + config_.gamma3 * t.l_mix;
  has_forward_ = true;
  return t;
}

Gradients LossEvaluator::backward() const {
  if (!has_forward_) throw StateError("backward() called before forward()");
  const auto& dict = model_.dict;
  const auto& mix = model_.mixtures;
  const auto& occ = model_.occluders;
  const int Y = mix.Y;
  const int K = dict.K;
  const int D = dict.D;
  const int P = likelihood_.positions();
  const double sigma = dict.sigma;

  Gradients g;
  g.mu.assign(static_cast<std::size_t>(K) * D, 0.0);
  g.logits.assign(mix.logits.size(), 0.0);
  std::vector<double> d_ell(static_cast<std::size_t>(P) * K, 0.0);
  std::vector<double> d_feat(static_cast<std::size_t>(P) * D, 0.0);
  std::vector<double> d_O(P, 0.0);

  const auto& O = inference_.occluder_plane;
  for (int y = 0; y < Y; ++y) {
    const int m = inference_.best_mixture[y];
    const auto& E = inference_.mixture_plane(y, m);
    const double g_score = (probabilities_[y] - (y == label_ ? 1.0 : 0.0)) / P;
    std::vector<double> d_E(P, 0.0);
    for (int p = 0; p < P; ++p) {
      if (occluded(E, O, p))
        d_O[p] += g_score;
      else {
        d_E[p] += g_score;
        if (y == label_) d_E[p] -= config_.gamma3;
      }
    }
    const auto log_alpha = mix.log_coefficients(y, m);
    auto d_logits = std::span<double>(g.logits).subspan((static_cast<std::size_t>(y) * mix.M + m) * mix.map_size(),
                                                        mix.map_size());
    for (int p = 0; p < P; ++p) {
      if (d_E[p] == 0.0) continue;
      const auto ell = likelihood_.at(p);
      const double* la = log_alpha.data() + static_cast<std::size_t>(p) * K;
      double* dl = d_logits.data() + static_cast<std::size_t>(p) * K;
      double* de = d_ell.data() + static_cast<std::size_t>(p) * K;
      for (int k = 0; k < K; ++k) {
        const double r = std::exp(la[k] + ell[k] - E[p]);
        de[k] += d_E[p] * r;
        dl[k] += d_E[p] * (r - std::exp(la[k]));
      }
    }
  }

  for (int p = 0; p < P; ++p) {
    if (d_O[p] == 0.0) continue;
    const auto row = occ.row(inference_.occluder_index[p]);
    const auto ell = likelihood_.at(p);
    const double base = O[p] - occ.prior_logodds;
    double* de = d_ell.data() + static_cast<std::size_t>(p) * K;
    for (int k = 0; k < K; ++k) de[k] += d_O[p] * std::exp(row[k] + ell[k] - base);
  }

  for (int p = 0; p < P; ++p) {
    const double* f = features_.at(p).data();
    double* df = d_feat.data() + static_cast<std::size_t>(p) * D;
    const double* de = d_ell.data() + static_cast<std::size_t>(p) * K;
    for (int k = 0; k < K; ++k) {
      if (de[k] == 0.0) continue;
      const double* mu = dict.kernel(k).data();
      double* gm = g.mu.data() + static_cast<std::size_t>(k) * D;
      const double s = sigma * de[k];
      for (int d = 0; d < D; ++d) {
        gm[d] += s * f[d];
        df[d] += s * mu[d];
      }
    }
    if (config_.gamma2 != 0.0) {
      const int k = argmax_kernel(features_, dict, p, nullptr);
      const double* mu = dict.kernel(k).data();
      double* gm = g.mu.data() + static_cast<std::size_t>(k) * D;
      for (int d = 0; d < D; ++d) {
        gm[d] -= config_.gamma2 * f[d];
        df[d] -= config_.gamma2 * mu[d];
      }
    }
  }

  if (!config_.freeze_backbone && has_backbone_cache_) {
    const auto omega = model_.backbone.projection();
    g.projection.assign(omega.size(), 0.0);
    backbone::accumulate_projection_gradient(cache_, features_, d_feat, model_.backbone, g.projection);
    for (std::size_t i = 0; i < omega.size(); ++i) g.projection[i] += 2.0 * config_.gamma1 * omega[i];
  }
  return g;
}

LossTerms total_loss(const FeatureMap& features, int label, const CompNetModel& model, const TrainConfig& config) {
  LossEvaluator ev(model, config);
  return ev.forward(features, label);
}

// ---------------------------------------------------------------------------
// Initialization

head::MixtureBank init_mixtures(std::span<const FeatureMap> features, std::span<const int> labels, int num_classes,
                                const vmf::VmfDictionary& dict, const TrainConfig& config) {
  if (features.empty()) throw InitError("no training images");
  if (features.size() != labels.size()) throw InitError("features and labels differ in length");
  const int H = features[0].H;
  const int W = features[0].W;
  const int P = H * W;
  const int K = dict.K;
  const int M = config.M;
  const double eps = config.smoothing;
  head::MixtureBank bank(num_classes, M, H, W, K);

  for (int y = 0; y < num_classes; ++y) {
    std::vector<std::vector<int>> maps;
    for (std::size_t i = 0; i < features.size(); ++i) {
      if (labels[i] != y) continue;
      if (features[i].H != H || features[i].W != W) throw ShapeError("training feature maps differ in size");
      maps.push_back(vmf::hard_assignments(features[i], dict));
    }
    if (static_cast<int>(maps.size()) < M)
      throw InitError("class " + std::to_string(y) + " has " + std::to_string(maps.size()) + " images, need at least M=" +
                      std::to_string(M));

    const int distinct = static_cast<int>(std::set<std::vector<int>>(maps.begin(), maps.end()).size());
    const int groups = std::min(M, distinct);
    std::vector<int> group_of(maps.size(), 0);
    if (groups > 1) {
      // One-hot assignment maps scaled to unit length; cosine = shared fraction.
      const std::size_t dim = static_cast<std::size_t>(P) * K;
      std::vector<double> onehot(maps.size() * dim, 0.0);
      const double v = 1.0 / std::sqrt(static_cast<double>(P));
      for (std::size_t i = 0; i < maps.size(); ++i)
        for (int p = 0; p < P; ++p) onehot[i * dim + static_cast<std::size_t>(p) * K + maps[i][p]] = v;
      vmf::ClusteringOptions opt{groups, config.seed + 1000003ULL * static_cast<std::uint64_t>(y + 1),
                                 config.cluster_iters};
      group_of = vmf::spherical_cluster_ml(onehot, static_cast<int>(dim), opt).assignments;
    }

    for (int m = 0; m < M; ++m) {
      // With fewer distinct maps than M, the extra mixtures repeat earlier groups.
      const int g = m % groups;
      std::vector<double> counts(static_cast<std::size_t>(P) * K, 0.0);
      int members = 0;
      for (std::size_t i = 0; i < maps.size(); ++i) {
        if (group_of[i] != g) continue;
        ++members;
        for (int p = 0; p < P; ++p) counts[static_cast<std::size_t>(p) * K + maps[i][p]] += 1.0;
      }
      auto logits = bank.logit_map(y, m);
      const double denom = members + K * eps;
      for (std::size_t i = 0; i < counts.size(); ++i) logits[i] = std::log((counts[i] + eps) / denom);
    }
  }
  return bank;
}

head::OccluderBank learn_occluder_models(std::span<const FeatureMap> backgrounds, const vmf::VmfDictionary& dict,
                                         int N, std::uint64_t seed, double smoothing, int max_iters) {
  if (N <= 0) throw InitError("N must be positive");
  if (static_cast<int>(backgrounds.size()) < N)
    throw InitError("need at least N=" + std::to_string(N) + " background images, got " +
                    std::to_string(backgrounds.size()));
  const int K = dict.K;
  std::vector<double> hist(backgrounds.size() * K, 0.0);
  std::vector<double> unit(hist.size(), 0.0);
  for (std::size_t i = 0; i < backgrounds.size(); ++i) {
    const auto a = vmf::hard_assignments(backgrounds[i], dict);
    double* h = hist.data() + i * K;
    for (int k : a) h[k] += 1.0;
    for (int k = 0; k < K; ++k) h[k] /= static_cast<double>(a.size());
    std::copy(h, h + K, unit.data() + i * K);
    normalize_or_e1({unit.data() + i * K, static_cast<std::size_t>(K)});
  }
  vmf::ClusteringOptions opt{N, seed + 7919ULL, max_iters};
  const auto clusters = vmf::spherical_cluster_ml(unit, K, opt);

  head::OccluderBank bank;
  bank.N = N;
  bank.K = K;
  bank.log_beta.assign(static_cast<std::size_t>(N) * K, 0.0);
  for (int n = 0; n < N; ++n) {
    std::vector<double> mean(K, 0.0);
    int members = 0;
    for (std::size_t i = 0; i < backgrounds.size(); ++i) {
      if (clusters.assignments[i] != n) continue;
      ++members;
      for (int k = 0; k < K; ++k) mean[k] += hist[i * K + k];
    }
    for (int k = 0; k < K; ++k) {
      const double m = members > 0 ? mean[k] / members : 1.0 / K;
      bank.log_beta[static_cast<std::size_t>(n) * K + k] = std::log((m + smoothing) / (1.0 + K * smoothing));
    }
  }
  return bank;
}

CompNetModel init_model(const backbone::BackboneParams& backbone, std::span<const Image> images,
                        std::span<const int> labels, std::span<const Image> backgrounds, const TrainConfig& config) {
  config.validate();
  if (images.empty()) throw InitError("no training images");
  if (images.size() != labels.size()) throw InitError("images and labels differ in length");
  if (backgrounds.empty()) throw InitError("at least one background image is required");
  int num_classes = 0;
  for (int l : labels) {
    if (l < 0) throw InitError("negative label");
    num_classes = std::max(num_classes, l + 1);
  }

  std::vector<FeatureMap> feats;
  feats.reserve(images.size());
  for (const auto& img : images) feats.push_back(backbone::extract_features(img, backbone));
  const int D = backbone.feature_dim();
  std::vector<double> all;
  all.reserve(feats.size() * feats[0].data.size());
  for (const auto& f : feats) {
    if (f.H != feats[0].H || f.W != feats[0].W) throw ShapeError("training images differ in size");
    all.insert(all.end(), f.data.begin(), f.data.end());
  }

  std::vector<FeatureMap> bg;
  bg.reserve(backgrounds.size());
  for (const auto& img : backgrounds) bg.push_back(backbone::extract_features(img, backbone));
  if (config.cluster_backgrounds)
    for (const auto& f : bg) all.insert(all.end(), f.data.begin(), f.data.end());

  CompNetModel model;
  model.backbone = backbone;
  vmf::ClusteringOptions opt{config.K, config.seed, config.cluster_iters};
  model.dict = vmf::make_dictionary(vmf::spherical_cluster_ml(all, D, opt), config.sigma);
  model.mixtures = init_mixtures(feats, labels, num_classes, model.dict, config);

  model.occluders = learn_occluder_models(bg, model.dict, config.N, config.seed, config.smoothing, config.cluster_iters);
  model.occluders.prior_logodds = config.prior_logodds;
  model.validate();
  return model;
}

// ---------------------------------------------------------------------------
// Optimization

TrainState::TrainState(CompNetModel m) : model(std::move(m)) {
  velocity_projection.assign(model.backbone.projection().size(), 0.0);
  velocity_mu.assign(model.dict.mu.size(), 0.0);
  velocity_logits.assign(model.mixtures.logits.size(), 0.0);
}

namespace {

void momentum_step(std::span<double> theta, std::span<double> velocity, std::span<const double> grad,
                   double momentum, double lr) {
  for (std::size_t i = 0; i < theta.size(); ++i) {
    velocity[i] = momentum * velocity[i] - lr * grad[i];
    theta[i] += velocity[i];
  }
}

}  // namespace

void apply_update(TrainState& state, const Gradients& grads, const TrainConfig& config) {
  auto& model = state.model;
  if (grads.mu.size() != model.dict.mu.size() || grads.logits.size() != model.mixtures.logits.size())
    throw ShapeError("gradient shapes do not match the model");
  momentum_step(model.dict.mu, state.velocity_mu, grads.mu, config.momentum, config.lr);
  // Only kernels that moved are projected back, so a zero step is exact.
  for (int k = 0; k < model.dict.K; ++k) {
    const auto v = std::span<const double>(state.velocity_mu).subspan(static_cast<std::size_t>(k) * model.dict.D,
                                                                      model.dict.D);
    if (std::any_of(v.begin(), v.end(), [](double x) { return x != 0.0; })) normalize_or_e1(model.dict.kernel(k));
  }
  momentum_step(model.mixtures.logits, state.velocity_logits, grads.logits, config.momentum, config.lr);
  if (!config.freeze_backbone && !grads.projection.empty()) {
    if (grads.projection.size() != state.velocity_projection.size())
      throw ShapeError("projection gradient shape mismatch");
    momentum_step(model.backbone.projection(), state.velocity_projection, grads.projection, config.momentum,
                  config.lr);
  }
}

double accuracy(const CompNetModel& model, std::span<const Image> images, std::span<const int> labels) {
  if (images.empty()) return 0.0;
  int correct = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto F = backbone::extract_features(images[i], model.backbone);
    if (head::infer(F, model.dict, model.mixtures, model.occluders).predicted == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

TrainState train(CompNetModel model, std::span<const Image> images, std::span<const int> labels,
                 const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (images.size() != labels.size()) throw InitError("images and labels differ in length");
  TrainState state(std::move(model));
  const std::size_t n = images.size();

  // A frozen backbone makes features constant across epochs.
  std::vector<FeatureMap> cached;
  if (config.freeze_backbone) {
    cached.reserve(n);
    for (const auto& img : images) cached.push_back(backbone::extract_features(img, state.model.backbone));
  }

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(n);
  LossEvaluator evaluator(state.model, config);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
    EpochLog log;
    log.epoch = epoch;
    for (std::size_t step = 0; step < n; ++step) {
      const std::size_t idx = order[step];
      const LossTerms t = config.freeze_backbone ? evaluator.forward(cached[idx], labels[idx])
                                                 : evaluator.forward(images[idx], labels[idx]);
      if (!std::isfinite(t.total))
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", image " + std::to_string(idx),
                              epoch, static_cast<int>(idx));
      log.mean_loss += t.total;
      log.l_class += t.l_class;
      log.l_weight += t.l_weight;
      log.l_vmf += t.l_vmf;
      log.l_mix += t.l_mix;
      apply_update(state, evaluator.backward(), config);
    }
    if (n > 0) {
      const double inv = 1.0 / static_cast<double>(n);
      log.mean_loss *= inv;
      log.l_class *= inv;
      log.l_weight *= inv;
      log.l_vmf *= inv;
      log.l_mix *= inv;
    }
    int correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const FeatureMap F =
          config.freeze_backbone ? cached[i] : backbone::extract_features(images[i], state.model.backbone);
      if (head::infer(F, state.model.dict, state.model.mixtures, state.model.occluders).predicted == labels[i])
        ++correct;
    }
    log.train_accuracy = n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
    state.epoch = epoch;
    state.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return state;
}

void write_training_log(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,mean_loss,l_class,l_weight,l_vmf,l_mix,train_accuracy\n";
  char buf[256];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.6f\n", e.epoch, e.mean_loss, e.l_class, e.l_weight,
                  e.l_vmf, e.l_mix, e.train_accuracy);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace compnet::train
