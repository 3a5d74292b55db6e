#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "compnet/bench.hpp"
#include "compnet/errors.hpp"
#include "compnet/trainer.hpp"
#include "support.hpp"

using namespace compnet;
using namespace compnet::train;

namespace {

std::vector<Image> random_images(std::mt19937_64& rng, int count) {
  std::vector<Image> out;
  for (int i = 0; i < count; ++i) out.push_back(testing::random_image(rng, 8, 8));
  return out;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.K = 5;
  c.M = 2;
  c.N = 2;
  return c;
}

FeatureMap constant_map(int H, int W, std::span<const double> v) {
  FeatureMap F(H, W, static_cast<int>(v.size()));
  for (int p = 0; p < F.positions(); ++p) std::copy(v.begin(), v.end(), F.at(p).begin());
  return F;
}

}  // namespace

TEST_CASE("equal class scores give a cross-entropy of ln 2") {
  auto model = testing::tiny_model(1);
  auto m1 = model.mixtures.logit_map(1, 0);
  auto m0 = model.mixtures.logit_map(0, 0);
  std::copy(m0.begin(), m0.end(), m1.begin());
  auto n1 = model.mixtures.logit_map(1, 1);
  auto n0 = model.mixtures.logit_map(0, 1);
  std::copy(n0.begin(), n0.end(), n1.begin());
  std::mt19937_64 rng(1);
  const auto F = testing::random_feature_map(rng, 3, 3, 4);
  const auto t = total_loss(F, 1, model, tiny_config());
  CHECK(t.l_class == doctest::Approx(std::numbers::ln2).epsilon(1e-12));
}

TEST_CASE("mixture loss is an empty sum when every position is occluded") {
  auto model = testing::tiny_model(2);
  model.occluders.prior_logodds = 1000.0;
  std::mt19937_64 rng(2);
  const auto t = total_loss(testing::random_feature_map(rng, 3, 3, 4), 0, model, tiny_config());
  CHECK(t.l_mix == 0.0);
}

TEST_CASE("zero loss weights leave only the class term") {
  const auto model = testing::tiny_model(3);
  auto c = tiny_config();
  c.gamma1 = c.gamma2 = c.gamma3 = 0.0;
  std::mt19937_64 rng(3);
  for (int i = 0; i < 10; ++i) {
    const auto t = total_loss(testing::random_feature_map(rng, 3, 3, 4), i % 2, model, c);
    CHECK(t.total == t.l_class);
  }
}

TEST_CASE("loss terms match their definitions") {
  const auto model = testing::tiny_model(4);
  const auto c = tiny_config();
  std::mt19937_64 rng(4);
  const auto F = testing::random_feature_map(rng, 3, 3, 4);
  LossEvaluator ev(model, c);
  const auto t = ev.forward(F, 1);
  const auto& r = ev.inference();

  const double z0 = r.scores[0] / 9.0, z1 = r.scores[1] / 9.0;
  const double mx = std::max(z0, z1);
  CHECK(t.l_class == doctest::Approx(mx + std::log(std::exp(z0 - mx) + std::exp(z1 - mx)) - z1).epsilon(1e-12));

  double w = 0.0;
  for (double x : model.backbone.projection()) w += x * x;
  CHECK(t.l_weight == doctest::Approx(w).epsilon(1e-12));

  double vmf_term = 0.0;
  for (int p = 0; p < 9; ++p) {
    double best = -2.0;
    for (int k = 0; k < 5; ++k) {
      double d = 0.0;
      for (int i = 0; i < 4; ++i) d += model.dict.kernel(k)[i] * F.at(p)[i];
      best = std::max(best, d);
    }
    vmf_term -= best;
  }
  CHECK(t.l_vmf == doctest::Approx(vmf_term).epsilon(1e-12));

  const auto& E = r.mixture_plane(1, r.best_mixture[1]);
  double mix = 0.0;
  for (int p = 0; p < 9; ++p)
    if (!(r.occluder_plane[p] > E[p])) mix -= E[p];
  CHECK(t.l_mix == doctest::Approx(mix).epsilon(1e-12));
  CHECK(t.total == doctest::Approx(t.l_class + 0.1 * t.l_weight + 5.0 * t.l_vmf + 1.0 * t.l_mix).epsilon(1e-12));
}

TEST_CASE("labels outside the class range are rejected") {
  const auto model = testing::tiny_model(5);
  std::mt19937_64 rng(5);
  const auto F = testing::random_feature_map(rng, 3, 3, 4);
  CHECK_THROWS_AS(total_loss(F, 2, model, tiny_config()), IndexError);
  CHECK_THROWS_AS(total_loss(F, -1, model, tiny_config()), IndexError);
}

TEST_CASE("backward before forward is a state error") {
  const auto model = testing::tiny_model(6);
  const auto c = tiny_config();
  LossEvaluator ev(model, c);
  CHECK_THROWS_AS(ev.backward(), StateError);
  CHECK_THROWS_AS(ev.inference(), StateError);
}

TEST_CASE("kernels that never win receive no vMF-loss gradient") {
  const auto model = testing::tiny_model(7);
  // Every feature equals kernel 0, so kernel 0 is the argmax everywhere.
  const auto F = constant_map(3, 3, model.dict.kernel(0));
  auto with = tiny_config(), without = tiny_config();
  without.gamma2 = 0.0;
  LossEvaluator a(model, with), b(model, without);
  a.forward(F, 0);
  b.forward(F, 0);
  const auto ga = a.backward(), gb = b.backward();
  for (int k = 1; k < 5; ++k)
    for (int d = 0; d < 4; ++d) CHECK(ga.mu[k * 4 + d] - gb.mu[k * 4 + d] == 0.0);
  double moved = 0.0;
  for (int d = 0; d < 4; ++d) moved += std::abs(ga.mu[d] - gb.mu[d]);
  CHECK(moved > 0.0);
}

TEST_CASE("weight-decay gradient is twice the projection") {
  const auto model = testing::tiny_model(8);
  std::mt19937_64 rng(8);
  const auto img = testing::random_image(rng, 8, 8);
  auto with = tiny_config(), without = tiny_config();
  with.freeze_backbone = without.freeze_backbone = false;
  with.gamma1 = 1.0;
  without.gamma1 = 0.0;
  LossEvaluator a(model, with), b(model, without);
  a.forward(img, 1);
  b.forward(img, 1);
  const auto ga = a.backward(), gb = b.backward();
  const auto omega = model.backbone.projection();
  REQUIRE(ga.projection.size() == omega.size());
  for (std::size_t i = 0; i < omega.size(); ++i)
    CHECK(ga.projection[i] - gb.projection[i] == doctest::Approx(2.0 * omega[i]).epsilon(1e-9));
}

TEST_CASE("a frozen backbone gets no projection gradient") {
  const auto model = testing::tiny_model(9);
  std::mt19937_64 rng(9);
  const auto c = tiny_config();
  LossEvaluator ev(model, c);
  ev.forward(testing::random_image(rng, 8, 8), 0);
  CHECK(ev.backward().projection.empty());
}

TEST_CASE("analytic gradients match central finite differences on the tiny model") {
  auto c = tiny_config();
  c.freeze_backbone = false;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto model = testing::tiny_model(100 + seed);
    std::mt19937_64 rng(seed);
    const auto img = testing::random_image(rng, 8, 8);
    const auto r = testing::check_gradients(model, img, static_cast<int>(seed % 2), c, 1e-3);
    CHECK(r.checked > 0);
    CHECK(r.mu <= 1e-4);
    CHECK(r.logits <= 1e-4);
    CHECK(r.projection <= 1e-4);
  }
}

TEST_CASE("optimizing only the mixtures lowers the mixture loss") {
  const auto model = testing::tiny_model(10);
  std::mt19937_64 rng(10);
  const auto F = testing::random_feature_map(rng, 3, 3, 4);
  auto with = tiny_config(), without = tiny_config();
  without.gamma3 = 0.0;
  CompNetModel m = model;
  double previous = total_loss(F, 0, m, with).l_mix;
  for (int step = 0; step < 20; ++step) {
    LossEvaluator a(m, with), b(m, without);
    a.forward(F, 0);
    b.forward(F, 0);
    const auto ga = a.backward(), gb = b.backward();
    for (std::size_t i = 0; i < m.mixtures.logits.size(); ++i) m.mixtures.logits[i] -= 0.05 * (ga.logits[i] - gb.logits[i]);
    const double now = total_loss(F, 0, m, with).l_mix;
    CHECK(now <= previous + 1e-12);
    previous = now;
  }
}

TEST_CASE("updates keep every coefficient map on the simplex") {
  auto c = tiny_config();
  c.lr = 0.5;
  std::mt19937_64 rng(11);
  TrainState state(testing::tiny_model(11));
  LossEvaluator ev(state.model, c);
  for (int step = 0; step < 10; ++step) {
    ev.forward(testing::random_feature_map(rng, 3, 3, 4), step % 2);
    apply_update(state, ev.backward(), c);
  }
  for (int y = 0; y < 2; ++y)
    for (int m = 0; m < 2; ++m) {
      const auto la = state.model.mixtures.log_coefficients(y, m);
      for (int p = 0; p < 9; ++p) {
        double s = 0.0;
        for (int k = 0; k < 5; ++k) s += std::exp(la[p * 5 + k]);
        CHECK(std::abs(s - 1.0) <= 1e-5);
      }
    }
  CHECK_NOTHROW(state.model.dict.validate());
}

TEST_CASE("a zero learning rate leaves every parameter bit-identical") {
  std::mt19937_64 rng(12);
  const auto images = random_images(rng, 6);
  const std::vector<int> labels = {0, 1, 0, 1, 0, 1};
  const auto model = testing::tiny_model(12);
  for (bool frozen : {true, false}) {
    auto c = tiny_config();
    c.lr = 0.0;
    c.epochs = 3;
    c.freeze_backbone = frozen;
    const auto state = train::train(model, images, labels, c);
    CHECK(state.model == model);
    CHECK(state.log.size() == 3);
  }
}

TEST_CASE("training is reproducible under a fixed seed") {
  std::mt19937_64 rng(13);
  const auto images = random_images(rng, 6);
  const std::vector<int> labels = {0, 1, 0, 1, 0, 1};
  auto c = tiny_config();
  c.epochs = 4;
  c.seed = 5;
  c.freeze_backbone = false;
  const auto a = train::train(testing::tiny_model(13), images, labels, c);
  const auto b = train::train(testing::tiny_model(13), images, labels, c);
  CHECK(a.model == b.model);
  CHECK(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].mean_loss == b.log[i].mean_loss);
  CHECK_FALSE(a.model == testing::tiny_model(13));
}

TEST_CASE("zero epochs returns the initial model with an empty log") {
  std::mt19937_64 rng(14);
  const auto images = random_images(rng, 2);
  auto c = tiny_config();
  c.epochs = 0;
  const auto s = train::train(testing::tiny_model(14), images, std::vector<int>{0, 1}, c);
  CHECK(s.log.empty());
  CHECK(s.model == testing::tiny_model(14));
}

TEST_CASE("a non-finite loss aborts training with its position") {
  std::mt19937_64 rng(15);
  const auto images = random_images(rng, 4);
  auto c = tiny_config();
  c.lr = 1e300;
  c.epochs = 5;
  c.freeze_backbone = false;
  try {
    train::train(testing::tiny_model(15), images, std::vector<int>{0, 1, 0, 1}, c);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.epoch() >= 1);
    CHECK(e.image() >= 0);
    CHECK(e.image() < 4);
  }
}

TEST_CASE("a single confident assignment gives the smoothed frequency") {
  const auto dict = testing::tiny_model(16).dict;
  const auto F = constant_map(3, 3, dict.kernel(2));
  auto c = tiny_config();
  c.M = 1;
  const std::vector<FeatureMap> feats = {F};
  const std::vector<int> labels = {0};
  const auto bank = init_mixtures(feats, labels, 1, dict, c);
  const auto la = bank.log_coefficients(0, 0);
  const double eps = c.smoothing;
  for (int p = 0; p < 9; ++p) {
    CHECK(std::exp(la[p * 5 + 2]) == doctest::Approx((1 + eps) / (1 + 5 * eps)).epsilon(1e-12));
    for (int k = 0; k < 5; ++k) CHECK(la[p * 5 + k] <= la[p * 5 + 2]);
  }
}

TEST_CASE("duplicate images do not shift the frequencies") {
  const auto dict = testing::tiny_model(17).dict;
  std::mt19937_64 rng(17);
  const auto F = testing::random_feature_map(rng, 3, 3, 4);
  auto c = tiny_config();
  c.M = 1;
  const std::vector<FeatureMap> one = {F}, two = {F, F};
  const auto a = init_mixtures(one, std::vector<int>{0}, 1, dict, c);
  const auto b = init_mixtures(two, std::vector<int>{0, 0}, 1, dict, c);
  const auto la = a.log_coefficients(0, 0), lb = b.log_coefficients(0, 0);
  // Counts double, so only the smoothing weight changes; the argmax and the
  // unsmoothed frequencies agree.
  const double eps = c.smoothing;
  for (std::size_t i = 0; i < la.size(); ++i) {
    const double fa = std::exp(la[i]) * (1 + 5 * eps) - eps;
    const double fb = (std::exp(lb[i]) * (2 + 5 * eps) - eps) / 2.0;
    CHECK(fa == doctest::Approx(fb).epsilon(1e-9));
  }
}

TEST_CASE("a class with fewer than M images cannot be initialized") {
  const auto dict = testing::tiny_model(18).dict;
  std::mt19937_64 rng(18);
  const std::vector<FeatureMap> feats = {testing::random_feature_map(rng, 3, 3, 4),
                                         testing::random_feature_map(rng, 3, 3, 4),
                                         testing::random_feature_map(rng, 3, 3, 4)};
  auto c = tiny_config();
  c.M = 2;
  CHECK_THROWS_AS(init_mixtures(feats, std::vector<int>{0, 0, 1}, 2, dict, c), InitError);
}

TEST_CASE("identical backgrounds give their own smoothed histogram") {
  const auto dict = testing::tiny_model(19).dict;
  std::mt19937_64 rng(19);
  const auto F = testing::random_feature_map(rng, 3, 3, 4);
  const std::vector<FeatureMap> bgs = {F, F, F};
  const double eps = 1e-2;
  const auto bank = learn_occluder_models(bgs, dict, 1, 0, eps);
  std::vector<double> hist(5, 0.0);
  for (int k : vmf::hard_assignments(F, dict)) hist[k] += 1.0 / 9.0;
  for (int k = 0; k < 5; ++k) CHECK(std::exp(bank.row(0)[k]) == doctest::Approx((hist[k] + eps) / (1 + 5 * eps)).epsilon(1e-12));
  CHECK_THROWS_AS(learn_occluder_models(bgs, dict, 2, 0, eps), InitError);
  CHECK_THROWS_AS(learn_occluder_models(std::vector<FeatureMap>{F}, dict, 2, 0, eps), InitError);
}

TEST_CASE("two background families are recovered by two occluder models") {
  const backbone::BackboneParams bb{backbone::BackboneConfig{}};
  std::vector<FeatureMap> feats;
  std::vector<int> family;
  for (int i = 0; i < 10; ++i) {
    feats.push_back(backbone::extract_features(bench::render_texture(bench::TextureFamily::Dots, 32, 100 + i), bb));
    family.push_back(0);
    feats.push_back(backbone::extract_features(bench::render_texture(bench::TextureFamily::Speckle, 32, 200 + i), bb));
    family.push_back(1);
  }
  std::vector<double> all;
  for (const auto& f : feats) all.insert(all.end(), f.data.begin(), f.data.end());
  const int K = 16;
  const auto dict = vmf::make_dictionary(vmf::spherical_cluster_ml(all, bb.feature_dim(), {K, 1, 100}), 30.0);
  const double eps = 1e-2;
  const auto bank = learn_occluder_models(feats, dict, 2, 3, eps);

  std::vector<std::vector<double>> family_mean(2, std::vector<double>(K, 0.0));
  for (std::size_t i = 0; i < feats.size(); ++i) {
    const auto a = vmf::hard_assignments(feats[i], dict);
    for (int k : a) family_mean[family[i]][k] += 1.0 / (10.0 * a.size());
  }
  for (int f = 0; f < 2; ++f) {
    double best = 2.0;
    for (int n = 0; n < 2; ++n) {
      double tv = 0.0;
      for (int k = 0; k < K; ++k)
        tv += std::abs(std::exp(bank.row(n)[k]) - (family_mean[f][k] + eps) / (1 + K * eps));
      best = std::min(best, 0.5 * tv);
    }
    CHECK(best <= 0.1);
  }
}

TEST_CASE("initialization alone classifies most of a toy training set") {
  const auto samples = bench::generate_dataset({2, 8, 32, 3});
  std::vector<Image> images;
  std::vector<int> labels;
  for (const auto& s : samples) {
    images.push_back(s.image);
    labels.push_back(s.label);
  }
  const auto bgs = bench::generate_backgrounds(10, 32, 3);
  TrainConfig c;
  c.seed = 3;
  const auto model = init_model(backbone::BackboneParams{backbone::BackboneConfig{}}, images, labels, bgs, c);
  CHECK(accuracy(model, images, labels) >= 14.0 / 16.0);
  CHECK(model.mixtures.M == 4);
  CHECK(model.occluders.N == 5);
}

TEST_CASE("config JSON round trips and rejects unknown keys") {
  TrainConfig c;
  c.lr = 0.02;
  c.epochs = 7;
  c.freeze_backbone = false;
  c.K = 12;
  const auto back = config_from_json(config_to_json(c));
  CHECK(back.lr == c.lr);
  CHECK(back.epochs == 7);
  CHECK_FALSE(back.freeze_backbone);
  CHECK(back.K == 12);
  CHECK(config_from_json("{\"epochs\": 3}").lr == TrainConfig{}.lr);
  CHECK_THROWS_AS(config_from_json("{\"learning_rate\": 0.1}"), FormatError);
  CHECK_THROWS_AS(config_from_json("{\"epochs\": \"many\"}"), FormatError);
  CHECK_THROWS_AS(config_from_json("[1]"), FormatError);
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.lr = -0.1;
  CHECK_THROWS_AS(c.validate(), DomainError);
  c = TrainConfig{};
  c.gamma2 = -1.0;
  CHECK_THROWS_AS(c.validate(), DomainError);
  c = TrainConfig{};
  c.epochs = -1;
  CHECK_THROWS_AS(c.validate(), DomainError);
  c = TrainConfig{};
  c.M = 0;
  CHECK_THROWS_AS(c.validate(), DomainError);
}

TEST_CASE("training log has the documented columns") {
  testing::TempDir dir("trainlog");
  EpochLog e;
  e.epoch = 1;
  e.mean_loss = 2.5;
  e.train_accuracy = 0.5;
  write_training_log({e}, dir / "log.csv");
  const auto bytes = testing::read_bytes(dir / "log.csv");
  const std::string text(bytes.begin(), bytes.end());
  CHECK(text.rfind("epoch,mean_loss,l_class,l_weight,l_vmf,l_mix,train_accuracy\n1,2.5,", 0) == 0);
}
