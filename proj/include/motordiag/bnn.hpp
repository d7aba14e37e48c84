#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "motordiag/error.hpp"
#include "motordiag/mcmc.hpp"
#include "motordiag/nn.hpp"
#include "motordiag/rng.hpp"
#include "motordiag/spectral.hpp"

namespace motordiag {

// Network family for the Bayesian classifier: tanh hidden layers, sigmoid
// output, independent N(0, prior_std^2) prior on every coordinate of the
// flattened weight vector.
struct BnnSpec {
  std::size_t input_dim = 5;
  std::vector<std::size_t> hidden = {5};
  Activation hidden_activation = Activation::Tanh;
  Activation output_activation = Activation::Sigmoid;
  double prior_std = 1.0;
  Likelihood likelihood = Likelihood::Bernoulli;

  MLPParams shape() const {
    if (prior_std <= 0.0) throw std::invalid_argument("prior_std must be positive");
    if (input_dim == 0) throw std::invalid_argument("input_dim must be positive");
    for (std::size_t w : hidden) {
      if (w == 0) throw std::invalid_argument("hidden widths must be positive");
    }
    std::vector<std::size_t> widths = hidden;
    widths.push_back(1);
    return make_mlp(input_dim, widths, hidden_activation, output_activation);
  }

  std::size_t dim() const { return shape().param_count(); }
};

// Log joint density evaluator with reusable buffers; used by both samplers
// and by the standalone log_joint entry points.
class BnnEvaluator {
 public:
  BnnEvaluator(const BnnSpec& spec, std::span<const TrainingExample> data)
      : spec_(spec), data_(data), workspace_(spec.shape()) {
    dim_ = workspace_.param_count();
  }

  std::size_t dim() const { return dim_; }

  double value(std::span<const double> w) {
    check(w);
    unflatten_into(w, workspace_);
    return data_term() + prior_term(w);
  }

  // Returns the log joint and writes its gradient into grad_out.
  double value_grad(std::span<const double> w, std::span<double> grad_out) {
    check(w);
    if (grad_out.size() != dim_) throw DimensionMismatch("gradient buffer size");
    unflatten_into(w, workspace_);

    double value = prior_term(w);
    const double inv_var = 1.0 / (spec_.prior_std * spec_.prior_std);
    for (std::size_t d = 0; d < dim_; ++d) grad_out[d] = -w[d] * inv_var;

    if (!data_.empty()) {
      const LossConfig cfg{0.0, spec_.likelihood};
      const LossAndGrad lg = loss_and_grad(workspace_, data_, cfg);
      const double scale = spec_.likelihood == Likelihood::Bernoulli ? -1.0 : -0.5;
      value += scale * lg.value;
      if (spec_.likelihood == Likelihood::GaussianSquared) {
        value += -0.5 * kLog2Pi * static_cast<double>(data_.size()) *
                 static_cast<double>(workspace_.output_dim());
      }
      const auto flat_grad = flatten(lg.grad);
      for (std::size_t d = 0; d < dim_; ++d) grad_out[d] += scale * flat_grad[d];
    }
    return value;
  }

 private:
  static constexpr double kLog2Pi = 1.8378770664093454836;

  void check(std::span<const double> w) const {
    if (w.size() != dim_) {
      throw DimensionMismatch("weight vector has " + std::to_string(w.size()) +
                              " values; spec needs " + std::to_string(dim_));
    }
  }

  double data_term() {
    if (data_.empty()) return 0.0;
    const LossConfig cfg{0.0, spec_.likelihood};
    const double data_loss = loss(workspace_, data_, cfg);
    if (spec_.likelihood == Likelihood::Bernoulli) return -data_loss;
    return -0.5 * data_loss -
           0.5 * kLog2Pi * static_cast<double>(data_.size()) *
               static_cast<double>(workspace_.output_dim());
  }

  double prior_term(std::span<const double> w) const {
    const double var = spec_.prior_std * spec_.prior_std;
    double acc = -0.5 * static_cast<double>(dim_) * (kLog2Pi + std::log(var));
    for (double wd : w) acc -= wd * wd / (2.0 * var);
    return acc;
  }

  BnnSpec spec_;
  std::span<const TrainingExample> data_;
  MLPParams workspace_;
  std::size_t dim_ = 0;
};

// Log likelihood (per spec.likelihood) plus the log prior, normalizing
// constants included.
inline double log_joint(const BnnSpec& spec, std::span<const double> w,
                        std::span<const TrainingExample> data) {
  BnnEvaluator eval(spec, data);
  return eval.value(w);
}

struct WeightSample {
  std::vector<double> w;
  double log_joint = 0.0;
};

struct PosteriorEnsemble {
  std::vector<WeightSample> samples;  // chains concatenated, post-warmup, thinned
  int chains = 1;
  double acceptance_rate = 0.0;
  std::uint64_t seed = 0;
  double step_size = 0.0;  // after warmup adaptation
  double max_chain_mean_z = 0.0;
  bool chains_consistent = true;
  std::size_t divergences = 0;
};

namespace detail {

inline PosteriorEnsemble from_run(SampleRun&& run) {
  PosteriorEnsemble ens;
  ens.chains = run.chains;
  ens.acceptance_rate = run.acceptance_rate;
  ens.seed = run.seed;
  ens.step_size = run.adapted_step_size;
  ens.max_chain_mean_z = run.max_chain_mean_z;
  ens.chains_consistent = run.chains_consistent;
  ens.divergences = run.divergences;
  ens.samples.reserve(run.samples.size());
  for (auto& s : run.samples) {
    ens.samples.push_back({std::move(s.w), s.log_density});
  }
  if (ens.samples.empty()) throw std::invalid_argument("no kept posterior draws");
  return ens;
}

inline auto prior_init(const BnnSpec& spec, std::size_t dim) {
  const double std_dev = spec.prior_std;
  return [dim, std_dev](Rng& rng) {
    std::vector<double> w(dim);
    for (double& v : w) v = rng.normal(0.0, std_dev);
    return w;
  };
}

}  // namespace detail

// Random-walk Metropolis over the flattened weights. Chains start from
// independent prior draws.
inline PosteriorEnsemble sample_posterior_mh(const BnnSpec& spec,
                                             std::span<const TrainingExample> data,
                                             const MhConfig& cfg) {
  BnnEvaluator eval(spec, data);
  const std::size_t dim = eval.dim();
  auto run = sample_mh(
      dim, [&eval](std::span<const double> w) { return eval.value(w); },
      detail::prior_init(spec, dim), cfg);
  return detail::from_run(std::move(run));
}

// Hamiltonian Monte Carlo over the flattened weights, gradients from the
// network core.
inline PosteriorEnsemble sample_posterior_hmc(const BnnSpec& spec,
                                              std::span<const TrainingExample> data,
                                              const HmcConfig& cfg) {
  BnnEvaluator eval(spec, data);
  const std::size_t dim = eval.dim();
  auto run = sample_hmc(
      dim,
      [&eval](std::span<const double> w, std::span<double> g) {
        return eval.value_grad(w, g);
      },
      detail::prior_init(spec, dim), cfg);
  return detail::from_run(std::move(run));
}

// Monte Carlo posterior predictive: the network output under every kept
// weight draw.
struct PredictiveDistribution {
  double mean = 0.0;
  std::vector<double> draws;

  // Central empirical interval at level alpha, widened if necessary so the
  // mean always lies inside.
  std::pair<double, double> credible_interval(double alpha) const {
    if (alpha <= 0.0 || alpha >= 1.0) {
      throw std::invalid_argument("alpha must lie in (0, 1)");
    }
    std::vector<double> sorted = draws;
    std::sort(sorted.begin(), sorted.end());
    const auto quantile = [&sorted](double q) {
      const double pos = q * static_cast<double>(sorted.size() - 1);
      const auto i = static_cast<std::size_t>(pos);
      const double frac = pos - static_cast<double>(i);
      const double a = sorted[i];
      const double b = sorted[std::min(i + 1, sorted.size() - 1)];
      return a + frac * (b - a);
    };
    double lo = quantile((1.0 - alpha) / 2.0);
    double hi = quantile((1.0 + alpha) / 2.0);
    lo = std::min(lo, mean);
    hi = std::max(hi, mean);
    return {lo, hi};
  }
};

inline PredictiveDistribution posterior_predictive(const PosteriorEnsemble& ensemble,
                                                   const BnnSpec& spec,
                                                   std::span<const double> x) {
  if (ensemble.samples.empty()) throw std::invalid_argument("empty ensemble");
  MLPParams workspace = spec.shape();
  if (x.size() != workspace.input_dim()) {
    throw DimensionMismatch("input has " + std::to_string(x.size()) +
                            " values; spec expects " +
                            std::to_string(workspace.input_dim()));
  }
  PredictiveDistribution pred;
  pred.draws.reserve(ensemble.samples.size());
  for (const auto& sample : ensemble.samples) {
    unflatten_into(sample.w, workspace);
    pred.draws.push_back(forward(workspace, x).at(0));
  }
  // centered summation: exact for a degenerate all-equal ensemble
  const double ref = pred.draws.front();
  double acc = 0.0;
  for (double d : pred.draws) acc += d - ref;
  pred.mean = ref + acc / static_cast<double>(pred.draws.size());
  return pred;
}

inline PredictiveDistribution posterior_predictive(const PosteriorEnsemble& ensemble,
                                                   const BnnSpec& spec,
                                                   const FeatureVector& fv) {
  return posterior_predictive(ensemble, spec, std::span<const double>(fv.values));
}

struct BnnPrediction {
  int label = 0;
  double uncertainty = 0.0;  // credible interval width at alpha = 0.9
};

// Fault iff the predictive mean reaches the threshold; ties classify as
// fault.
inline BnnPrediction predict_class_bnn(const PredictiveDistribution& pred,
                                       double threshold = 0.5) {
  const auto [lo, hi] = pred.credible_interval(0.9);
  return {pred.mean >= threshold ? 1 : 0, hi - lo};
}

inline constexpr std::size_t kHistogramBins = 50;

struct ClassHistogram {
  ClassKind kind = ClassKind::Healthy;
  std::array<std::int64_t, kHistogramBins> counts{};

  static double bin_lo(std::size_t bin) {
    return static_cast<double>(bin) / kHistogramBins;
  }
  static double bin_hi(std::size_t bin) {
    return static_cast<double>(bin + 1) / kHistogramBins;
  }
};

// Pools the predictive draws of every example of each class into a fixed
// 50-bin histogram over [0, 1].
inline std::vector<ClassHistogram> output_distribution_by_class(
    const PosteriorEnsemble& ensemble, const BnnSpec& spec,
    const std::vector<FeatureVector>& dataset) {
  std::map<ClassKind, ClassHistogram> by_class;
  for (const auto& fv : dataset) {
    if (!fv.label) throw EmptyDataset("histogram dataset must be labeled");
    auto [it, inserted] = by_class.try_emplace(fv.label->kind);
    it->second.kind = fv.label->kind;
    const auto pred = posterior_predictive(ensemble, spec, fv);
    for (double draw : pred.draws) {
      auto bin = static_cast<std::size_t>(draw * kHistogramBins);
      bin = std::min(bin, kHistogramBins - 1);
      ++it->second.counts[bin];
    }
  }
  std::vector<ClassHistogram> out;
  out.reserve(by_class.size());
  for (auto& [kind, hist] : by_class) out.push_back(hist);
  return out;
}

// CSV columns: class,bin_lo,bin_hi,count.
inline void write_histograms_csv(const std::filesystem::path& path,
                                 const std::vector<ClassHistogram>& histograms) {
  std::ofstream out(path);
  if (!out) throw IoFailure("cannot open for write: " + path.string());
  out << "class,bin_lo,bin_hi,count\n";
  for (const auto& hist : histograms) {
    for (std::size_t b = 0; b < kHistogramBins; ++b) {
      out << to_string(hist.kind) << ',' << detail::format_double(ClassHistogram::bin_lo(b))
          << ',' << detail::format_double(ClassHistogram::bin_hi(b)) << ','
          << hist.counts[b] << '\n';
    }
  }
  if (!out) throw IoFailure("write failed: " + path.string());
}

// bnn-v1 ensemble document.
inline nlohmann::json bnn_to_json(const BnnSpec& spec, const PosteriorEnsemble& ensemble,
                                  const nlohmann::json& extras = nlohmann::json::object()) {
  nlohmann::json draws = nlohmann::json::array();
  nlohmann::json log_joints = nlohmann::json::array();
  for (const auto& s : ensemble.samples) {
    draws.push_back(s.w);
    log_joints.push_back(s.log_joint);
  }
  nlohmann::json doc = {
      {"version", "bnn-v1"},
      {"spec",
       {{"input_dim", spec.input_dim},
        {"hidden", spec.hidden},
        {"hidden_activation", to_string(spec.hidden_activation)},
        {"output_activation", to_string(spec.output_activation)},
        {"prior_std", spec.prior_std},
        {"likelihood", to_string(spec.likelihood)}}},
      {"chains", ensemble.chains},
      {"acceptance_rate", ensemble.acceptance_rate},
      {"seed", ensemble.seed},
      {"step_size", ensemble.step_size},
      {"max_chain_mean_z", ensemble.max_chain_mean_z},
      {"chains_consistent", ensemble.chains_consistent},
      {"divergences", ensemble.divergences},
      {"draws", std::move(draws)},
      {"log_joints", std::move(log_joints)}};
  for (const auto& [key, value] : extras.items()) doc[key] = value;
  return doc;
}

struct BnnModel {
  BnnSpec spec;
  PosteriorEnsemble ensemble;
};

inline BnnModel bnn_from_json(const nlohmann::json& doc) {
  if (doc.value("version", "") != std::string("bnn-v1")) {
    throw IoFailure("not a bnn-v1 document");
  }
  BnnModel model;
  const auto& js = doc.at("spec");
  model.spec.input_dim = js.at("input_dim").get<std::size_t>();
  model.spec.hidden = js.at("hidden").get<std::vector<std::size_t>>();
  const auto hidden_act = parse_activation(js.at("hidden_activation").get<std::string>());
  const auto output_act = parse_activation(js.at("output_activation").get<std::string>());
  const auto likelihood = parse_likelihood(js.at("likelihood").get<std::string>());
  if (!hidden_act || !output_act || !likelihood) {
    throw IoFailure("unknown enum value in bnn-v1 document");
  }
  model.spec.hidden_activation = *hidden_act;
  model.spec.output_activation = *output_act;
  model.spec.likelihood = *likelihood;
  model.spec.prior_std = js.at("prior_std").get<double>();

  model.ensemble.chains = doc.at("chains").get<int>();
  model.ensemble.acceptance_rate = doc.at("acceptance_rate").get<double>();
  model.ensemble.seed = doc.at("seed").get<std::uint64_t>();
  model.ensemble.step_size = doc.at("step_size").get<double>();
  model.ensemble.max_chain_mean_z = doc.at("max_chain_mean_z").get<double>();
  model.ensemble.chains_consistent = doc.at("chains_consistent").get<bool>();
  model.ensemble.divergences = doc.value("divergences", std::size_t{0});

  const auto& draws = doc.at("draws");
  const auto& log_joints = doc.at("log_joints");
  if (draws.size() != log_joints.size()) throw IoFailure("draw/log-joint size mismatch");
  const std::size_t dim = model.spec.dim();
  for (std::size_t i = 0; i < draws.size(); ++i) {
    WeightSample s;
    s.w = draws[i].get<std::vector<double>>();
    if (s.w.size() != dim) throw IoFailure("draw dimension does not match spec");
    s.log_joint = log_joints[i].get<double>();
    model.ensemble.samples.push_back(std::move(s));
  }
  if (model.ensemble.samples.empty()) throw IoFailure("bnn-v1 document has no draws");
  return model;
}

}  // namespace motordiag
