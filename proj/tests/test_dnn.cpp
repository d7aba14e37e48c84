#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "motordiag/dnn.hpp"
#include "motordiag/rng.hpp"

using namespace motordiag;

namespace {

// Two well-separated Gaussian blobs in 2-D; linearly separable with margin.
std::vector<FeatureVector> make_blobs(std::size_t per_class, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<FeatureVector> data;
  for (std::size_t i = 0; i < per_class; ++i) {
    FeatureVector a;
    a.values = {rng.normal(-1.0, 0.15), rng.normal(-1.0, 0.15)};
    a.label = ClassLabel{ClassKind::Healthy};
    data.push_back(std::move(a));

    FeatureVector b;
    b.values = {rng.normal(1.0, 0.15), rng.normal(1.0, 0.15)};
    b.label = ClassLabel{ClassKind::GearFault};
    data.push_back(std::move(b));
  }
  return data;
}

double weight_norm(const MLPParams& p) {
  double acc = 0.0;
  for (const auto& l : p.layers) {
    for (double w : l.weights) acc += w * w;
  }
  return std::sqrt(acc);
}

double train_accuracy(const MLPParams& p, const std::vector<FeatureVector>& data) {
  std::size_t correct = 0;
  for (const auto& fv : data) {
    if (classify(predict_dnn(p, fv)) == fv.label->binary()) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace

TEST_CASE("build_dnn") {
  SECTION("default input gives the published layer stack") {
    const MLPParams p = build_dnn(2025, 1);
    REQUIRE(p.layers.size() == 5);
    REQUIRE(p.layers[0].in == 2025);
    REQUIRE(p.layers[0].out == 180);
    REQUIRE(p.layers[1].out == 60);
    REQUIRE(p.layers[2].out == 60);
    REQUIRE(p.layers[3].out == 30);
    REQUIRE(p.layers[4].out == 1);
    for (std::size_t i = 0; i + 1 < p.layers.size(); ++i) {
      REQUIRE(p.layers[i].activation == Activation::Relu);
      REQUIRE(p.layers[i + 1].in == p.layers[i].out);
    }
    REQUIRE(p.layers.back().activation == Activation::Sigmoid);
    for (const auto& l : p.layers) {
      for (double b : l.bias) REQUIRE(b == 0.0);
    }
  }

  SECTION("narrow inputs keep the hidden widths") {
    const MLPParams p = build_dnn(5, 1);
    REQUIRE(p.layers[0].in == 5);
    REQUIRE(p.layers[0].out == 180);
  }

  SECTION("the same seed gives identical parameters") {
    const MLPParams a = build_dnn(16, 99);
    const MLPParams b = build_dnn(16, 99);
    REQUIRE(flatten(a) == flatten(b));
    const MLPParams c = build_dnn(16, 100);
    REQUIRE(flatten(a) != flatten(c));
  }

  SECTION("initialization scales with fan-in") {
    const MLPParams p = build_dnn(2025, 7);
    double acc = 0.0;
    for (double w : p.layers[0].weights) acc += w * w;
    const double observed_std = std::sqrt(acc / static_cast<double>(p.layers[0].weights.size()));
    REQUIRE(observed_std == Catch::Approx(std::sqrt(2.0 / 2025.0)).epsilon(0.05));
  }
}

TEST_CASE("train_dnn") {
  const auto blobs = make_blobs(40, 7);

  SECTION("separable blobs reach 100% training accuracy") {
    DnnTrainConfig cfg;
    cfg.epochs = 200;
    cfg.seed = 3;
    const auto result = train_dnn(blobs, cfg);
    REQUIRE(train_accuracy(result.params, blobs) == 1.0);
    REQUIRE(result.loss_curve.size() == 200);
  }

  SECTION("zero epochs returns the initialization unchanged") {
    DnnTrainConfig cfg;
    cfg.epochs = 0;
    cfg.seed = 12;
    const auto result = train_dnn(blobs, cfg);
    REQUIRE(flatten(result.params) == flatten(build_dnn(2, 12)));
  }

  SECTION("training is deterministic in the seed") {
    DnnTrainConfig cfg;
    cfg.epochs = 12;
    cfg.seed = 5;
    const auto a = train_dnn(blobs, cfg);
    const auto b = train_dnn(blobs, cfg);
    REQUIRE(flatten(a.params) == flatten(b.params));
    REQUIRE(a.loss_curve == b.loss_curve);
  }

  SECTION("full-batch loss curve is monotone non-increasing at lr 1e-3") {
    DnnTrainConfig cfg;
    cfg.epochs = 60;
    cfg.seed = 9;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = blobs.size();  // full batch: curve is the exact loss
    cfg.optimizer = Optimizer::Sgd;
    const auto result = train_dnn(blobs, cfg);
    for (std::size_t e = 1; e < result.loss_curve.size(); ++e) {
      REQUIRE(result.loss_curve[e] <= result.loss_curve[e - 1] + 1e-12);
    }
  }

  SECTION("L2 regularization shrinks the weights") {
    DnnTrainConfig plain;
    plain.epochs = 80;
    plain.seed = 21;
    plain.lambda = 0.0;
    DnnTrainConfig penalized = plain;
    penalized.lambda = 1e-2;

    const auto a = train_dnn(blobs, plain);
    const auto b = train_dnn(blobs, penalized);
    REQUIRE(weight_norm(b.params) < weight_norm(a.params));
  }

  SECTION("mixed feature widths are rejected") {
    auto bad = blobs;
    bad.push_back(FeatureVector{{1.0, 2.0, 3.0}, ClassLabel{ClassKind::Healthy}, 1.0});
    DnnTrainConfig cfg;
    cfg.epochs = 1;
    REQUIRE_THROWS_AS(train_dnn(bad, cfg), DimensionMismatch);
  }
}

TEST_CASE("predict_dnn") {
  SECTION("all-zero weights output exactly 0.5, which classifies as fault") {
    const MLPParams p = make_mlp(4, {180, 1}, Activation::Relu, Activation::Sigmoid);
    const std::vector<double> x = {0.1, -0.2, 0.3, 0.9};
    const double prob = predict_dnn(p, x);
    REQUIRE(prob == 0.5);
    REQUIRE(classify(prob) == 1);  // tie goes to fault
  }

  SECTION("trained blob model separates the blob centers") {
    const auto blobs = make_blobs(40, 7);
    DnnTrainConfig cfg;
    cfg.epochs = 200;
    cfg.seed = 3;
    const auto result = train_dnn(blobs, cfg);
    REQUIRE(predict_dnn(result.params, std::vector<double>{-1.0, -1.0}) < 0.5);
    REQUIRE(predict_dnn(result.params, std::vector<double>{1.0, 1.0}) > 0.5);
  }

  SECTION("output stays strictly inside (0, 1)") {
    Rng rng(8);
    MLPParams p = build_dnn(3, 2);
    for (auto& l : p.layers) {
      for (double& w : l.weights) w = rng.normal(0.0, 5.0);
    }
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> x = {rng.normal(0, 100), rng.normal(0, 100), rng.normal(0, 100)};
      const double prob = predict_dnn(p, x);
      REQUIRE(prob > 0.0);
      REQUIRE(prob < 1.0);
    }
  }

  SECTION("dimension mismatch is rejected") {
    const MLPParams p = build_dnn(4, 1);
    REQUIRE_THROWS_AS(predict_dnn(p, std::vector<double>{1.0}), DimensionMismatch);
  }
}
