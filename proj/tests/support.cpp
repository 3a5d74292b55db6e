#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iterator>

namespace testing {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  std::random_device rd;
  path_ = fs::temp_directory_path() /
          ("compnet_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::vector<double> random_unit(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(dim);
  double sq = 0.0;
  do {
    sq = 0.0;
    for (auto& x : v) {
      x = n(rng);
      sq += x * x;
    }
  } while (sq < 1e-12);
  for (auto& x : v) x /= std::sqrt(sq);
  return v;
}

compnet::FeatureMap random_feature_map(std::mt19937_64& rng, int H, int W, int D) {
  compnet::FeatureMap F(H, W, D);
  for (int p = 0; p < H * W; ++p) {
    const auto v = random_unit(rng, D);
    std::copy(v.begin(), v.end(), F.at(p).begin());
  }
  return F;
}

compnet::vmf::VmfDictionary random_dictionary(std::mt19937_64& rng, int K, int D, double sigma) {
  compnet::vmf::VmfDictionary dict;
  dict.K = K;
  dict.D = D;
  dict.sigma = sigma;
  for (int k = 0; k < K; ++k) {
    const auto v = random_unit(rng, D);
    dict.mu.insert(dict.mu.end(), v.begin(), v.end());
  }
  return dict;
}

compnet::head::MixtureBank random_mixtures(std::mt19937_64& rng, int Y, int M, int H, int W, int K, double scale) {
  compnet::head::MixtureBank bank(Y, M, H, W, K);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& x : bank.logits) x = n(rng);
  return bank;
}

compnet::head::OccluderBank random_occluders(std::mt19937_64& rng, int N, int K, double prior_logodds) {
  compnet::head::OccluderBank occ;
  occ.N = N;
  occ.K = K;
  occ.prior_logodds = prior_logodds;
  occ.log_beta.resize(static_cast<std::size_t>(N) * K);
  std::normal_distribution<double> n(0.0, 1.5);
  for (int i = 0; i < N; ++i) {
    std::vector<double> logits(K);
    for (auto& x : logits) x = n(rng);
    compnet::head::log_softmax(logits, std::span<double>(occ.log_beta.data() + static_cast<std::size_t>(i) * K, K));
  }
  return occ;
}

compnet::CompNetModel tiny_model(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  const int C = 6, k = 3, D = 4, K = 5, Y = 2, M = 2, N = 2, H = 3, W = 3;
  std::vector<double> filters(static_cast<std::size_t>(C) * k * k);
  for (auto& x : filters) x = n(rng);
  std::vector<double> projection(static_cast<std::size_t>(D) * C);
  for (auto& x : projection) x = n(rng) / std::sqrt(static_cast<double>(C));
  compnet::CompNetModel model;
  model.backbone = compnet::backbone::BackboneParams(C, k, 1, 2, D, filters, projection);
  model.dict = random_dictionary(rng, K, D);
  model.mixtures = random_mixtures(rng, Y, M, H, W, K, 1.0);
  model.occluders = random_occluders(rng, N, K);
  return model;
}

compnet::Image random_image(std::mt19937_64& rng, int h, int w) {
  compnet::Image img(h, w, 1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& p : img.pixels) p = u(rng);
  return img;
}

namespace {

// Every discrete decision the backward pass treats as a constant.
std::vector<int> discrete_state(const compnet::CompNetModel& model, const compnet::Image& image,
                                const compnet::train::TrainConfig& config, int label) {
  compnet::train::LossEvaluator ev(model, config);
  ev.forward(image, label);
  const auto& r = ev.inference();
  std::vector<int> s = r.best_mixture;
  s.insert(s.end(), r.occluder_index.begin(), r.occluder_index.end());
  for (int y = 0; y < model.mixtures.Y; ++y) {
    const auto& E = r.mixture_plane(y, r.best_mixture[y]);
    for (int p = 0; p < E.positions(); ++p) s.push_back(r.occluder_plane[p] > E[p]);
  }
  const auto a = compnet::vmf::hard_assignments(ev.features(), model.dict);
  s.insert(s.end(), a.begin(), a.end());
  return s;
}

double loss_of(const compnet::CompNetModel& model, const compnet::Image& image, int label,
               const compnet::train::TrainConfig& config) {
  compnet::train::LossEvaluator ev(model, config);
  return ev.forward(image, label).total;
}

}  // namespace

GradientCheck check_gradients(const compnet::CompNetModel& model, const compnet::Image& image, int label,
                              const compnet::train::TrainConfig& config, double h) {
  compnet::train::LossEvaluator ev(model, config);
  ev.forward(image, label);
  const auto grads = ev.backward();
  const auto base_state = discrete_state(model, image, config, label);
  GradientCheck out;

  auto probe = [&](auto&& param_of, const std::vector<double>& analytic, double& worst) {
    compnet::CompNetModel work = model;
    std::span<double> values = param_of(work);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double keep = values[i];
      bool same = true;
      auto at = [&](double offset) {
        values[i] = keep + offset;
        same = same && discrete_state(work, image, config, label) == base_state;
        return loss_of(work, image, label, config);
      };
      const double numeric = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
      values[i] = keep;
      if (!same) {
        ++out.skipped;
        continue;
      }
      ++out.checked;
      const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
      worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
    }
  };
  probe([](compnet::CompNetModel& m) { return std::span<double>(m.dict.mu); }, grads.mu, out.mu);
  probe([](compnet::CompNetModel& m) { return std::span<double>(m.mixtures.logits); }, grads.logits, out.logits);
  if (!config.freeze_backbone)
    probe([](compnet::CompNetModel& m) { return m.backbone.projection(); }, grads.projection, out.projection);
  return out;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<long double> naive_likelihood(const compnet::FeatureMap& F, const compnet::vmf::VmfDictionary& dict) {
  std::vector<long double> L(static_cast<std::size_t>(F.positions()) * dict.K);
  for (int p = 0; p < F.positions(); ++p)
    for (int k = 0; k < dict.K; ++k) {
      long double dot = 0.0L;
      for (int d = 0; d < F.D; ++d)
        dot += static_cast<long double>(F.at(p)[d]) * static_cast<long double>(dict.kernel(k)[d]);
      L[static_cast<std::size_t>(p) * dict.K + k] = static_cast<long double>(dict.sigma) * dot;
    }
  return L;
}

std::vector<long double> naive_mixture_plane(const std::vector<long double>& L, int P, int K,
                                             const std::vector<double>& logits) {
  std::vector<long double> E(P);
  for (int p = 0; p < P; ++p) {
    long double z = 0.0L, s = 0.0L;
    for (int k = 0; k < K; ++k) z += std::exp(static_cast<long double>(logits[static_cast<std::size_t>(p) * K + k]));
    for (int k = 0; k < K; ++k) {
      const long double alpha = std::exp(static_cast<long double>(logits[static_cast<std::size_t>(p) * K + k])) / z;
      s += alpha * std::exp(L[static_cast<std::size_t>(p) * K + k]);
    }
    E[p] = std::log(s);
  }
  return E;
}

std::vector<long double> naive_occluder_plane(const std::vector<long double>& L, int P, int K,
                                              const compnet::head::OccluderBank& occ) {
  std::vector<long double> O(P);
  for (int p = 0; p < P; ++p) {
    long double best = -INFINITY;
    for (int n = 0; n < occ.N; ++n) {
      long double s = 0.0L;
      for (int k = 0; k < K; ++k)
        s += std::exp(static_cast<long double>(occ.row(n)[k])) * std::exp(L[static_cast<std::size_t>(p) * K + k]);
      best = std::max(best, std::log(s));
    }
    O[p] = best + occ.prior_logodds;
  }
  return O;
}

}  // namespace testing
