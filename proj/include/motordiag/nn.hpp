#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "motordiag/error.hpp"
#include "motordiag/rng.hpp"

namespace motordiag {

enum class Activation { Relu, Tanh, Sigmoid, Identity };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Identity: return "identity";
  }
  return "identity";
}

inline std::optional<Activation> parse_activation(std::string_view s) {
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "identity") return Activation::Identity;
  return std::nullopt;
}

// Overflow-safe logistic function.
inline double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow for large z.
inline double softplus(double z) {
  if (z > 35.0) return z;
  if (z < -35.0) return std::exp(z);
  return std::log1p(std::exp(z));
}

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::Relu: return z > 0.0 ? z : 0.0;
    case Activation::Tanh: return std::tanh(z);
    case Activation::Sigmoid: return sigmoid(z);
    case Activation::Identity: return z;
  }
  return z;
}

// Derivative in terms of pre-activation z and activated value y.
// The relu subgradient at exactly 0 is taken as 0.
inline double activate_grad(Activation a, double z, double y) {
  switch (a) {
    case Activation::Relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: return 1.0 - y * y;
    case Activation::Sigmoid: return y * (1.0 - y);
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

struct Layer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;  // row-major, out x in
  std::vector<double> bias;     // out
  Activation activation = Activation::Identity;
};

struct MLPParams {
  std::vector<Layer> layers;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in; }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out; }

  std::size_t param_count() const {
    std::size_t d = 0;
    for (const auto& l : layers) d += l.weights.size() + l.bias.size();
    return d;
  }
};

// Builds a zero-initialized network from layer widths; the last entry of
// `widths` is the output dimension.
inline MLPParams make_mlp(std::size_t input_dim, const std::vector<std::size_t>& widths,
                          Activation hidden, Activation output) {
  MLPParams p;
  std::size_t in = input_dim;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    Layer l;
    l.in = in;
    l.out = widths[i];
    l.weights.assign(l.in * l.out, 0.0);
    l.bias.assign(l.out, 0.0);
    l.activation = (i + 1 == widths.size()) ? output : hidden;
    in = l.out;
    p.layers.push_back(std::move(l));
  }
  return p;
}

namespace detail {

inline void affine(const Layer& l, std::span<const double> x, std::vector<double>& z) {
  z.resize(l.out);
  for (std::size_t r = 0; r < l.out; ++r) {
    const double* w = l.weights.data() + r * l.in;
    double acc = l.bias[r];
    for (std::size_t c = 0; c < l.in; ++c) acc += w[c] * x[c];
    z[r] = acc;
  }
}

}  // namespace detail

// Per-layer pre-activations and activations from one forward pass.
struct ForwardTrace {
  std::vector<std::vector<double>> pre;
  std::vector<std::vector<double>> post;

  const std::vector<double>& output() const { return post.back(); }
  const std::vector<double>& output_pre_activation() const { return pre.back(); }
};

inline ForwardTrace forward_trace(const MLPParams& params, std::span<const double> x) {
  if (params.layers.empty()) throw DimensionMismatch("network has no layers");
  if (x.size() != params.input_dim()) {
    throw DimensionMismatch("input has " + std::to_string(x.size()) +
                            " values; network expects " +
                            std::to_string(params.input_dim()));
  }
  ForwardTrace t;
  t.pre.resize(params.layers.size());
  t.post.resize(params.layers.size());
  std::span<const double> cur = x;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const Layer& l = params.layers[i];
    detail::affine(l, cur, t.pre[i]);
    t.post[i].resize(l.out);
    for (std::size_t r = 0; r < l.out; ++r) {
      t.post[i][r] = activate(l.activation, t.pre[i][r]);
    }
    cur = t.post[i];
  }
  return t;
}

inline std::vector<double> forward(const MLPParams& params, std::span<const double> x) {
  return forward_trace(params, x).output();
}

enum class Likelihood { GaussianSquared, Bernoulli };

inline std::string_view to_string(Likelihood l) {
  return l == Likelihood::GaussianSquared ? "gaussian_squared" : "bernoulli";
}

inline std::optional<Likelihood> parse_likelihood(std::string_view s) {
  if (s == "gaussian_squared") return Likelihood::GaussianSquared;
  if (s == "bernoulli") return Likelihood::Bernoulli;
  return std::nullopt;
}

struct LossConfig {
  double lambda = 0.0;
  Likelihood likelihood = Likelihood::GaussianSquared;
};

// A non-owning training example; y is the target (binary labels in the
// classification pipeline).
struct TrainingExample {
  std::span<const double> x;
  double y = 0.0;
};

inline double l2_weight_penalty(const MLPParams& params) {
  double acc = 0.0;
  for (const auto& l : params.layers) {
    for (double w : l.weights) acc += w * w;
  }
  return acc;
}

// Sum of per-example losses plus lambda * sum of squared weights (biases
// excluded from the penalty). Bernoulli requires a sigmoid output layer and
// is evaluated from the logit, which stays finite for any weights.
inline double loss(const MLPParams& params, std::span<const TrainingExample> data,
                   const LossConfig& cfg) {
  if (data.empty()) throw EmptyDataset("loss over an empty batch");
  if (cfg.likelihood == Likelihood::Bernoulli &&
      params.layers.back().activation != Activation::Sigmoid) {
    throw DimensionMismatch("Bernoulli loss requires a sigmoid output layer");
  }
  double acc = 0.0;
  for (const auto& ex : data) {
    const ForwardTrace t = forward_trace(params, ex.x);
    if (cfg.likelihood == Likelihood::GaussianSquared) {
      for (std::size_t r = 0; r < t.output().size(); ++r) {
        const double res = ex.y - t.output()[r];
        acc += res * res;
      }
    } else {
      for (std::size_t r = 0; r < t.output_pre_activation().size(); ++r) {
        const double z = t.output_pre_activation()[r];
        acc += softplus(z) - ex.y * z;
      }
    }
  }
  return acc + cfg.lambda * l2_weight_penalty(params);
}

namespace detail {

inline MLPParams zero_like(const MLPParams& params) {
  MLPParams g = params;
  for (auto& l : g.layers) {
    std::fill(l.weights.begin(), l.weights.end(), 0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
  return g;
}

// Backpropagates one example into `grad`; returns the example's loss term.
inline double accumulate_grad(const MLPParams& params, const TrainingExample& ex,
                              Likelihood likelihood, MLPParams& grad,
                              std::vector<double>& delta, std::vector<double>& delta_prev) {
  const ForwardTrace t = forward_trace(params, ex.x);
  const std::size_t L = params.layers.size();
  const Layer& out_layer = params.layers[L - 1];

  double example_loss = 0.0;
  delta.resize(out_layer.out);
  for (std::size_t r = 0; r < out_layer.out; ++r) {
    const double z = t.pre[L - 1][r];
    const double y_hat = t.post[L - 1][r];
    if (likelihood == Likelihood::GaussianSquared) {
      const double res = ex.y - y_hat;
      example_loss += res * res;
      delta[r] = -2.0 * res * activate_grad(out_layer.activation, z, y_hat);
    } else {
      example_loss += softplus(z) - ex.y * z;
      delta[r] = sigmoid(z) - ex.y;  // d/dz of softplus(z) - y z
    }
  }

  for (std::size_t li = L; li-- > 0;) {
    const Layer& l = params.layers[li];
    Layer& gl = grad.layers[li];
    const std::span<const double> input =
        li == 0 ? ex.x : std::span<const double>(t.post[li - 1]);

    for (std::size_t r = 0; r < l.out; ++r) {
      const double d = delta[r];
      gl.bias[r] += d;
      double* gw = gl.weights.data() + r * l.in;
      for (std::size_t c = 0; c < l.in; ++c) gw[c] += d * input[c];
    }

    if (li == 0) break;
    const Layer& below = params.layers[li - 1];
    delta_prev.assign(below.out, 0.0);
    for (std::size_t r = 0; r < l.out; ++r) {
      const double d = delta[r];
      const double* w = l.weights.data() + r * l.in;
      for (std::size_t c = 0; c < l.in; ++c) delta_prev[c] += d * w[c];
    }
    for (std::size_t c = 0; c < below.out; ++c) {
      delta_prev[c] *= activate_grad(below.activation, t.pre[li - 1][c], t.post[li - 1][c]);
    }
    std::swap(delta, delta_prev);
  }
  return example_loss;
}

}  // namespace detail

struct LossAndGrad {
  double value = 0.0;
  MLPParams grad;
};

// Exact reverse-mode gradient of `loss` with the same shape as the
// parameters.
inline LossAndGrad loss_and_grad(const MLPParams& params,
                                 std::span<const TrainingExample> data,
                                 const LossConfig& cfg) {
  if (data.empty()) throw EmptyDataset("gradient over an empty batch");
  if (cfg.likelihood == Likelihood::Bernoulli &&
      params.layers.back().activation != Activation::Sigmoid) {
    throw DimensionMismatch("Bernoulli loss requires a sigmoid output layer");
  }
  LossAndGrad out;
  out.grad = detail::zero_like(params);
  std::vector<double> delta, delta_prev;
  for (const auto& ex : data) {
    out.value += detail::accumulate_grad(params, ex, cfg.likelihood, out.grad, delta,
                                         delta_prev);
  }
  if (cfg.lambda != 0.0) {
    out.value += cfg.lambda * l2_weight_penalty(params);
    for (std::size_t li = 0; li < params.layers.size(); ++li) {
      const auto& w = params.layers[li].weights;
      auto& gw = out.grad.layers[li].weights;
      for (std::size_t i = 0; i < w.size(); ++i) gw[i] += 2.0 * cfg.lambda * w[i];
    }
  }
  if (!std::isfinite(out.value)) throw NonFiniteLoss("loss is not finite");
  return out;
}

inline MLPParams grad(const MLPParams& params, std::span<const TrainingExample> data,
                      const LossConfig& cfg) {
  return loss_and_grad(params, data, cfg).grad;
}

// Flatten order: layers in sequence, each layer's weights row-major, then
// its biases.
inline std::vector<double> flatten(const MLPParams& params) {
  std::vector<double> flat;
  flat.reserve(params.param_count());
  for (const auto& l : params.layers) {
    flat.insert(flat.end(), l.weights.begin(), l.weights.end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  return flat;
}

inline MLPParams unflatten(std::span<const double> flat, const MLPParams& shape) {
  if (flat.size() != shape.param_count()) {
    throw LengthMismatch("flat vector has " + std::to_string(flat.size()) +
                         " values; network needs " +
                         std::to_string(shape.param_count()));
  }
  MLPParams p = shape;
  std::size_t pos = 0;
  for (auto& l : p.layers) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), l.weights.size(),
                l.weights.begin());
    pos += l.weights.size();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), l.bias.size(),
                l.bias.begin());
    pos += l.bias.size();
  }
  return p;
}

// Same layout as unflatten but reuses the destination's storage.
inline void unflatten_into(std::span<const double> flat, MLPParams& dest) {
  if (flat.size() != dest.param_count()) {
    throw LengthMismatch("flat vector does not match network shape");
  }
  std::size_t pos = 0;
  for (auto& l : dest.layers) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), l.weights.size(),
                l.weights.begin());
    pos += l.weights.size();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), l.bias.size(),
                l.bias.begin());
    pos += l.bias.size();
  }
}

// mlp-v1 model document. `extras` lets callers attach pipeline metadata
// (for example the feature configuration) without the core format caring.
inline nlohmann::json mlp_to_json(const MLPParams& params,
                                  const nlohmann::json& extras = nlohmann::json::object()) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : params.layers) {
    layers.push_back({{"in", l.in}, {"out", l.out}, {"activation", to_string(l.activation)}});
  }
  nlohmann::json doc = {{"version", "mlp-v1"},
                        {"layers", layers},
                        {"weights", flatten(params)}};
  for (const auto& [key, value] : extras.items()) doc[key] = value;
  return doc;
}

inline MLPParams mlp_from_json(const nlohmann::json& doc) {
  if (doc.value("version", "") != std::string("mlp-v1")) {
    throw IoFailure("not an mlp-v1 document");
  }
  MLPParams shape;
  for (const auto& jl : doc.at("layers")) {
    Layer l;
    l.in = jl.at("in").get<std::size_t>();
    l.out = jl.at("out").get<std::size_t>();
    const auto act = parse_activation(jl.at("activation").get<std::string>());
    if (!act) throw IoFailure("unknown activation in model document");
    l.activation = *act;
    l.weights.assign(l.in * l.out, 0.0);
    l.bias.assign(l.out, 0.0);
    shape.layers.push_back(std::move(l));
  }
  const auto flat = doc.at("weights").get<std::vector<double>>();
  return unflatten(flat, shape);
}

inline void save_model_json(const std::filesystem::path& path, const nlohmann::json& doc) {
  std::ofstream out(path);
  if (!out) throw IoFailure("cannot open for write: " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw IoFailure("write failed: " + path.string());
}

inline nlohmann::json load_model_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open " + path.string());
  nlohmann::json doc;
  in >> doc;
  return doc;
}

}  // namespace motordiag
