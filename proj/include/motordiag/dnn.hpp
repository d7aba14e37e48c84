#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "motordiag/error.hpp"
#include "motordiag/nn.hpp"
#include "motordiag/rng.hpp"
#include "motordiag/spectral.hpp"

namespace motordiag {

enum class Optimizer { Sgd, SgdMomentum };

struct DnnTrainConfig {
  std::size_t epochs = 300;
  double learning_rate = 1e-3;
  double lambda = 1e-4;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::SgdMomentum;
  double momentum = 0.9;
  Likelihood likelihood = Likelihood::Bernoulli;
  bool record_curve = true;  // full-dataset loss after every epoch
};

// The deep stack: input -> 180 -> 60 -> 60 -> 30 -> 1, relu hidden layers
// and a sigmoid output. Weights are He-initialized (normal with stddev
// sqrt(2 / fan_in)), biases zero.
inline MLPParams build_dnn(std::size_t input_dim = 2025, std::uint64_t seed = 0) {
  if (input_dim == 0) throw DimensionMismatch("input_dim must be positive");
  MLPParams p = make_mlp(input_dim, {180, 60, 60, 30, 1}, Activation::Relu,
                         Activation::Sigmoid);
  Rng rng(derive_seed(seed, 0xd44eULL));
  for (auto& l : p.layers) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(l.in));
    for (double& w : l.weights) w = rng.normal(0.0, stddev);
  }
  return p;
}

struct DnnTrainResult {
  MLPParams params;
  std::vector<double> loss_curve;  // loss() on the full set after each epoch
};

namespace detail {

inline std::vector<TrainingExample> as_examples(const std::vector<FeatureVector>& data) {
  std::vector<TrainingExample> ex;
  ex.reserve(data.size());
  for (const auto& fv : data) {
    if (!fv.label) throw EmptyDataset("training vector without a label");
    ex.push_back({std::span<const double>(fv.values),
                  static_cast<double>(fv.label->binary())});
  }
  return ex;
}

}  // namespace detail

// Mini-batch gradient descent on `loss`. Batches are drawn from a seeded
// per-epoch shuffle; the data gradient is averaged over the batch and the
// L2 penalty gradient applied once per step.
inline DnnTrainResult train_dnn(std::span<const TrainingExample> data,
                                const DnnTrainConfig& cfg) {
  if (data.empty()) throw EmptyDataset("training set is empty");
  if (cfg.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) {
    throw std::invalid_argument("momentum must lie in [0, 1)");
  }
  const std::size_t input_dim = data.front().x.size();
  for (const auto& ex : data) {
    if (ex.x.size() != input_dim) {
      throw DimensionMismatch("feature vectors have mixed widths");
    }
  }

  DnnTrainResult result;
  result.params = build_dnn(input_dim, cfg.seed);
  MLPParams velocity = detail::zero_like(result.params);
  const LossConfig loss_cfg{cfg.lambda, cfg.likelihood};

  Rng shuffle_rng(derive_seed(cfg.seed, 0x5874ULL));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<TrainingExample> batch;
  batch.reserve(cfg.batch_size);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, order.size());
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);

      const LossConfig batch_cfg{0.0, cfg.likelihood};
      LossAndGrad lg = loss_and_grad(result.params, batch, batch_cfg);
      const double inv_batch = 1.0 / static_cast<double>(batch.size());

      for (std::size_t li = 0; li < result.params.layers.size(); ++li) {
        Layer& l = result.params.layers[li];
        Layer& g = lg.grad.layers[li];
        Layer& v = velocity.layers[li];
        for (std::size_t i = 0; i < l.weights.size(); ++i) {
          const double step =
              g.weights[i] * inv_batch + 2.0 * cfg.lambda * l.weights[i];
          if (cfg.optimizer == Optimizer::SgdMomentum) {
            v.weights[i] = cfg.momentum * v.weights[i] - cfg.learning_rate * step;
            l.weights[i] += v.weights[i];
          } else {
            l.weights[i] -= cfg.learning_rate * step;
          }
        }
        for (std::size_t i = 0; i < l.bias.size(); ++i) {
          const double step = g.bias[i] * inv_batch;
          if (cfg.optimizer == Optimizer::SgdMomentum) {
            v.bias[i] = cfg.momentum * v.bias[i] - cfg.learning_rate * step;
            l.bias[i] += v.bias[i];
          } else {
            l.bias[i] -= cfg.learning_rate * step;
          }
        }
      }
    }
    if (cfg.record_curve) {
      const double epoch_loss = loss(result.params, data, loss_cfg);
      if (!std::isfinite(epoch_loss)) {
        throw NonFiniteLoss("training diverged at epoch " + std::to_string(epoch));
      }
      result.loss_curve.push_back(epoch_loss);
    }
  }

  // Divergence check even when the curve is disabled.
  if (!cfg.record_curve && !data.empty()) {
    const double final_loss = loss(result.params, data, loss_cfg);
    if (!std::isfinite(final_loss)) throw NonFiniteLoss("training diverged");
  }
  return result;
}

inline DnnTrainResult train_dnn(const std::vector<FeatureVector>& data,
                                const DnnTrainConfig& cfg) {
  const auto examples = detail::as_examples(data);
  return train_dnn(std::span<const TrainingExample>(examples), cfg);
}

// Probability that the input is a fault; classify as fault iff >= 0.5.
// The sigmoid underflows to exactly 0 or 1 at |logit| beyond ~745; the
// returned probability is nudged back into the open interval.
inline double predict_dnn(const MLPParams& params, std::span<const double> x) {
  const double p = forward(params, x).at(0);
  return std::clamp(p, std::numeric_limits<double>::min(),
                    1.0 - std::numeric_limits<double>::epsilon() / 2.0);
}

inline double predict_dnn(const MLPParams& params, const FeatureVector& fv) {
  return predict_dnn(params, std::span<const double>(fv.values));
}

// Ties at exactly the threshold classify as fault.
inline int classify(double probability, double threshold = 0.5) {
  return probability >= threshold ? 1 : 0;
}

}  // namespace motordiag
