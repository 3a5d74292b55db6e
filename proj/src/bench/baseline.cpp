#include <cmath>
#include <numeric>
#include <random>

#include "compnet/bench.hpp"
#include "compnet/errors.hpp"
#include "compnet/head.hpp"

namespace compnet::bench {

namespace {

std::vector<double> linear_logits(const LinearHead& head, const FeatureMap& f) {
  const std::size_t n = static_cast<std::size_t>(head.P) * head.D;
  std::vector<double> z(head.Y);
  for (int y = 0; y < head.Y; ++y) {
    const double* w = head.weights.data() + static_cast<std::size_t>(y) * n;
    double s = head.bias[y];
    for (std::size_t i = 0; i < n; ++i) s += w[i] * f.data[i];
    z[y] = s;
  }
  return z;
}

}  // namespace

LinearHead train_linear_head(std::span<const FeatureMap> features, std::span<const int> labels, int num_classes,
                             const LinearTrainOptions& options) {
  if (features.empty() || features.size() != labels.size()) throw InitError("linear head needs labelled features");
  LinearHead head;
  head.Y = num_classes;
  head.P = features[0].positions();
  head.D = features[0].D;
  const std::size_t n = static_cast<std::size_t>(head.P) * head.D;
  head.weights.assign(static_cast<std::size_t>(head.Y) * n, 0.0);
  head.bias.assign(head.Y, 0.0);
  std::vector<double> vw(head.weights.size(), 0.0), vb(head.Y, 0.0);

  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> order(features.size());
  std::vector<double> q(head.Y);
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
    for (std::size_t idx : order) {
      const FeatureMap& f = features[idx];
      if (f.positions() != head.P || f.D != head.D) throw ShapeError("feature maps differ in size");
      head::log_softmax(linear_logits(head, f), q);
      for (int y = 0; y < head.Y; ++y) {
        const double g = std::exp(q[y]) - (y == labels[idx] ? 1.0 : 0.0);
        double* w = head.weights.data() + static_cast<std::size_t>(y) * n;
        double* v = vw.data() + static_cast<std::size_t>(y) * n;
        for (std::size_t i = 0; i < n; ++i) {
          v[i] = options.momentum * v[i] - options.lr * g * f.data[i];
          w[i] += v[i];
        }
        vb[y] = options.momentum * vb[y] - options.lr * g;
        head.bias[y] += vb[y];
      }
    }
  }
  return head;
}

int predict(const LinearHead& head, const FeatureMap& features) {
  if (features.positions() != head.P || features.D != head.D) throw ShapeError("feature map does not fit the head");
  const auto z = linear_logits(head, features);
  return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

}  // namespace compnet::bench
