#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <deque>
#include <limits>
#include <span>
#include <vector>

#include "motordiag/bnn.hpp"
#include "motordiag/rng.hpp"
#include "motordiag/synth.hpp"

using namespace motordiag;

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// f(x, w) = w*x + b with x fixed at 0 reduces to f = b: the bias has the
// textbook conjugate normal posterior (unit observation noise, N(0,1)
// prior) and the weight keeps its prior.
struct ConjugateToy {
  BnnSpec spec;
  std::deque<std::vector<double>> storage;
  std::vector<TrainingExample> data;
  double posterior_mean = 0.0;
  double posterior_var = 0.0;

  explicit ConjugateToy(std::size_t n, double y_value = 2.0) {
    spec.input_dim = 1;
    spec.hidden = {};
    spec.output_activation = Activation::Identity;
    spec.likelihood = Likelihood::GaussianSquared;

    double sum_y = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      storage.push_back({0.0});
      data.push_back({std::span<const double>(storage.back()), y_value});
      sum_y += y_value;
    }
    posterior_var = 1.0 / (1.0 + static_cast<double>(n));
    posterior_mean = posterior_var * sum_y;
  }
};

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

Moments coordinate_moments(const PosteriorEnsemble& ens, std::size_t d) {
  Moments m;
  for (const auto& s : ens.samples) m.mean += s.w[d];
  m.mean /= static_cast<double>(ens.samples.size());
  for (const auto& s : ens.samples) {
    const double dv = s.w[d] - m.mean;
    m.var += dv * dv;
  }
  m.var /= static_cast<double>(ens.samples.size());
  return m;
}

BnnSpec prior_only_spec() {
  // 1 -> 1 affine network: two coordinates in the flat vector.
  BnnSpec spec;
  spec.input_dim = 1;
  spec.hidden = {};
  spec.output_activation = Activation::Identity;
  spec.likelihood = Likelihood::GaussianSquared;
  return spec;
}

}  // namespace

TEST_CASE("log_joint") {
  SECTION("zero weights with no data is the log prior at the origin") {
    BnnSpec spec;
    spec.input_dim = 5;
    spec.hidden = {5};
    const std::size_t D = spec.dim();
    REQUIRE(D == 36);
    const std::vector<double> w(D, 0.0);
    const double value = log_joint(spec, w, {});
    REQUIRE(value == Catch::Approx(-0.5 * static_cast<double>(D) * kLog2Pi).epsilon(1e-12));
  }

  SECTION("doubling the prior std lowers the density at the origin and raises it far away") {
    BnnSpec narrow = prior_only_spec();
    BnnSpec wide = prior_only_spec();
    wide.prior_std = 2.0;

    const std::vector<double> origin(narrow.dim(), 0.0);
    REQUIRE(log_joint(wide, origin, {}) < log_joint(narrow, origin, {}));

    const std::vector<double> far(narrow.dim(), 6.0);
    REQUIRE(log_joint(wide, far, {}) > log_joint(narrow, far, {}));
  }

  SECTION("Gaussian likelihood matches a term-by-term oracle") {
    Rng rng(404);
    BnnSpec spec;
    spec.input_dim = 3;
    spec.hidden = {4};
    spec.likelihood = Likelihood::GaussianSquared;
    spec.output_activation = Activation::Sigmoid;
    const std::size_t D = spec.dim();

    std::deque<std::vector<double>> storage;
    std::vector<TrainingExample> data;
    for (int i = 0; i < 6; ++i) {
      std::vector<double> x(3);
      for (double& v : x) v = rng.normal();
      storage.push_back(std::move(x));
      data.push_back({std::span<const double>(storage.back()),
                      static_cast<double>(rng.below(2))});
    }
    std::vector<double> w(D);
    for (double& v : w) v = rng.normal();

    // oracle: log N(y | f, 1) summed over examples plus log N(w_d | 0, 1)
    MLPParams net = unflatten(w, spec.shape());
    double expected = 0.0;
    for (const auto& ex : data) {
      const double f = forward(net, ex.x).at(0);
      const double r = ex.y - f;
      expected += -0.5 * kLog2Pi - 0.5 * r * r;
    }
    for (double v : w) expected += -0.5 * kLog2Pi - 0.5 * v * v;

    REQUIRE(log_joint(spec, w, data) == Catch::Approx(expected).margin(1e-12));
  }

  SECTION("dimension mismatch is rejected") {
    BnnSpec spec;
    const std::vector<double> w(3, 0.0);
    REQUIRE_THROWS_AS(log_joint(spec, w, {}), DimensionMismatch);
  }
}

TEST_CASE("Metropolis posterior sampling") {
  SECTION("prior-only target recovers the prior moments at 50k draws") {
    const BnnSpec spec = prior_only_spec();
    MhConfig cfg;
    cfg.steps = 17500;
    cfg.warmup = 5000;
    cfg.step_size = 1.0;
    cfg.chains = 4;
    cfg.seed = 99;

    const auto ens = sample_posterior_mh(spec, {}, cfg);
    REQUIRE(ens.samples.size() == 50000);
    for (std::size_t d = 0; d < 2; ++d) {
      const Moments m = coordinate_moments(ens, d);
      REQUIRE(std::abs(m.mean) < 0.05);
      REQUIRE(m.var == Catch::Approx(1.0).epsilon(0.10));
    }
    REQUIRE(ens.acceptance_rate >= 0.15);
    REQUIRE(ens.acceptance_rate <= 0.6);
  }

  SECTION("conjugate toy matches the closed form within 5%") {
    const ConjugateToy toy(10);
    MhConfig cfg;
    cfg.steps = 30000;
    cfg.warmup = 5000;
    cfg.step_size = 0.6;
    cfg.chains = 4;
    cfg.seed = 7;

    const auto ens = sample_posterior_mh(toy.spec, toy.data, cfg);
    const Moments bias = coordinate_moments(ens, 1);
    REQUIRE(bias.mean == Catch::Approx(toy.posterior_mean).epsilon(0.05));
    REQUIRE(bias.var == Catch::Approx(toy.posterior_var).epsilon(0.05));
    const Moments weight = coordinate_moments(ens, 0);
    REQUIRE(std::abs(weight.mean) < 0.05);
    REQUIRE(weight.var == Catch::Approx(1.0).epsilon(0.10));
  }

  SECTION("zero kept draws violates the precondition") {
    MhConfig cfg;
    cfg.steps = 100;
    cfg.warmup = 100;
    REQUIRE_THROWS_AS(sample_posterior_mh(prior_only_spec(), {}, cfg),
                      std::invalid_argument);
  }
}

TEST_CASE("HMC posterior sampling") {
  SECTION("conjugate toy matches the closed form within 5%") {
    const ConjugateToy toy(10);
    HmcConfig cfg;
    cfg.draws = 4000;
    cfg.warmup = 500;
    cfg.leapfrog_steps = 10;
    cfg.step_size = 0.2;
    cfg.chains = 4;
    cfg.seed = 17;

    const auto ens = sample_posterior_hmc(toy.spec, toy.data, cfg);
    REQUIRE(ens.samples.size() == 16000);
    const Moments bias = coordinate_moments(ens, 1);
    REQUIRE(bias.mean == Catch::Approx(toy.posterior_mean).epsilon(0.05));
    REQUIRE(bias.var == Catch::Approx(toy.posterior_var).epsilon(0.05));
    REQUIRE(ens.chains_consistent);
  }

  SECTION("posterior variance contracts as observations accumulate") {
    double previous = std::numeric_limits<double>::infinity();
    for (std::size_t n : {1u, 10u, 100u}) {
      const ConjugateToy toy(n);
      HmcConfig cfg;
      cfg.draws = 2000;
      cfg.warmup = 500;
      cfg.leapfrog_steps = 10;
      cfg.step_size = 0.15;
      cfg.chains = 2;
      cfg.seed = 23;
      const auto ens = sample_posterior_hmc(toy.spec, toy.data, cfg);
      const Moments bias = coordinate_moments(ens, 1);
      REQUIRE(bias.var < previous);
      REQUIRE(bias.var == Catch::Approx(toy.posterior_var).epsilon(0.15));
      previous = bias.var;
    }
  }

  SECTION("sampling is deterministic for a fixed seed") {
    const ConjugateToy toy(5);
    HmcConfig cfg;
    cfg.draws = 50;
    cfg.warmup = 50;
    cfg.chains = 2;
    cfg.seed = 31;
    const auto a = sample_posterior_hmc(toy.spec, toy.data, cfg);
    const auto b = sample_posterior_hmc(toy.spec, toy.data, cfg);
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
      REQUIRE(a.samples[i].w == b.samples[i].w);
      REQUIRE(a.samples[i].log_joint == b.samples[i].log_joint);
    }
  }
}

TEST_CASE("posterior_predictive") {
  BnnSpec spec;
  spec.input_dim = 2;
  spec.hidden = {3};

  SECTION("an ensemble of identical samples gives a zero-width interval") {
    Rng rng(3);
    std::vector<double> w(spec.dim());
    for (double& v : w) v = rng.normal();

    PosteriorEnsemble ens;
    for (int i = 0; i < 10; ++i) ens.samples.push_back({w, -1.0});

    const std::vector<double> x = {0.4, -0.2};
    const auto pred = posterior_predictive(ens, spec, x);
    const MLPParams net = unflatten(w, spec.shape());
    REQUIRE(pred.mean == forward(net, x).at(0));
    const auto [lo, hi] = pred.credible_interval(0.9);
    REQUIRE(lo == hi);
    REQUIRE(lo == pred.mean);
  }

  SECTION("the mean lies within the draw range and draws stay in (0,1)") {
    Rng rng(13);
    PosteriorEnsemble ens;
    for (int i = 0; i < 40; ++i) {
      std::vector<double> w(spec.dim());
      for (double& v : w) v = rng.normal(0.0, 2.0);
      ens.samples.push_back({std::move(w), 0.0});
    }
    const std::vector<double> x = {1.0, 1.0};
    const auto pred = posterior_predictive(ens, spec, x);
    double lo = 1.0, hi = 0.0;
    for (double d : pred.draws) {
      REQUIRE(d > 0.0);
      REQUIRE(d < 1.0);
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
    REQUIRE(pred.mean >= lo);
    REQUIRE(pred.mean <= hi);

    // the mean sits inside any central credible interval by construction
    for (double alpha : {0.1, 0.5, 0.9, 0.99}) {
      const auto [a, b] = pred.credible_interval(alpha);
      REQUIRE(a <= pred.mean);
      REQUIRE(pred.mean <= b);
    }
  }

  SECTION("dimension mismatch is rejected") {
    PosteriorEnsemble ens;
    ens.samples.push_back({std::vector<double>(spec.dim(), 0.0), 0.0});
    REQUIRE_THROWS_AS(posterior_predictive(ens, spec, std::vector<double>{1.0}),
                      DimensionMismatch);
  }
}

TEST_CASE("predict_class_bnn") {
  SECTION("a mean of exactly 0.5 classifies as fault") {
    PredictiveDistribution pred;
    pred.draws = {0.5, 0.5, 0.5};
    pred.mean = 0.5;
    const auto result = predict_class_bnn(pred);
    REQUIRE(result.label == 1);
    REQUIRE(result.uncertainty == 0.0);
  }

  SECTION("confident fault prediction carries a narrow interval") {
    PredictiveDistribution pred;
    for (int i = 0; i < 100; ++i) pred.draws.push_back(0.985 + 0.0001 * (i % 10));
    double acc = 0.0;
    for (double d : pred.draws) acc += d;
    pred.mean = acc / 100.0;
    const auto result = predict_class_bnn(pred);
    REQUIRE(result.label == 1);
    REQUIRE(result.uncertainty < 0.01);
  }

  SECTION("a single-sample ensemble has zero width") {
    PredictiveDistribution pred;
    pred.draws = {0.2};
    pred.mean = 0.2;
    const auto result = predict_class_bnn(pred);
    REQUIRE(result.label == 0);
    REQUIRE(result.uncertainty == 0.0);
  }
}

TEST_CASE("output_distribution_by_class") {
  BnnSpec spec;
  spec.input_dim = 2;
  spec.hidden = {2};

  Rng rng(37);
  PosteriorEnsemble ens;
  for (int i = 0; i < 25; ++i) {
    std::vector<double> w(spec.dim());
    for (double& v : w) v = rng.normal();
    ens.samples.push_back({std::move(w), 0.0});
  }

  SECTION("one class pools examples x samples counts") {
    std::vector<FeatureVector> dataset(4);
    for (auto& fv : dataset) {
      fv.values = {rng.normal(), rng.normal()};
      fv.label = ClassLabel{ClassKind::GearFault};
    }
    const auto hists = output_distribution_by_class(ens, spec, dataset);
    REQUIRE(hists.size() == 1);
    REQUIRE(hists[0].kind == ClassKind::GearFault);
    std::int64_t total = 0;
    for (std::int64_t c : hists[0].counts) total += c;
    REQUIRE(total == static_cast<std::int64_t>(dataset.size() * ens.samples.size()));
  }

  SECTION("bin edges are exactly k/50") {
    REQUIRE(ClassHistogram::bin_lo(0) == 0.0);
    REQUIRE(ClassHistogram::bin_hi(0) == Catch::Approx(0.02));
    REQUIRE(ClassHistogram::bin_lo(25) == Catch::Approx(0.5));
    REQUIRE(ClassHistogram::bin_hi(49) == 1.0);
  }
}

TEST_CASE("trained synthetic histograms order healthy mass below fault mass") {
  SynthSpec synth;
  synth.sample_rate_hz = 8192;
  synth.clips_per_class = 12;
  synth.seed = 2025;
  const auto dataset = gen_dataset(synth);
  FeatureConfig fc;
  fc.count = 5;
  const auto features = normalize_dataset(featurize_dataset(dataset, fc));

  std::deque<std::vector<double>> storage;
  std::vector<TrainingExample> train;
  for (const auto& fv : features) {
    storage.push_back(fv.values);
    train.push_back({std::span<const double>(storage.back()),
                     static_cast<double>(fv.label->binary())});
  }

  BnnSpec spec;
  spec.input_dim = 5;
  HmcConfig cfg;
  cfg.draws = 200;
  cfg.warmup = 200;
  cfg.chains = 2;
  cfg.seed = 61;
  const auto ensemble = sample_posterior_hmc(spec, train, cfg);

  const auto histograms = output_distribution_by_class(ensemble, spec, features);
  REQUIRE(histograms.size() == 5);

  const auto mass_center = [](const ClassHistogram& h) {
    double weighted = 0.0;
    double total = 0.0;
    for (std::size_t b = 0; b < kHistogramBins; ++b) {
      const double mid = 0.5 * (ClassHistogram::bin_lo(b) + ClassHistogram::bin_hi(b));
      weighted += mid * static_cast<double>(h.counts[b]);
      total += static_cast<double>(h.counts[b]);
    }
    return weighted / total;
  };

  double healthy_center = 0.0;
  std::vector<double> fault_centers;
  for (const auto& h : histograms) {
    if (h.kind == ClassKind::Healthy) {
      healthy_center = mass_center(h);
    } else {
      fault_centers.push_back(mass_center(h));
    }
  }
  for (double fc_center : fault_centers) {
    REQUIRE(healthy_center < fc_center);
  }
}

TEST_CASE("bnn-v1 document round-trip") {
  BnnSpec spec;
  spec.input_dim = 3;
  spec.hidden = {4, 2};
  spec.prior_std = 1.5;

  Rng rng(41);
  PosteriorEnsemble ens;
  ens.chains = 2;
  ens.acceptance_rate = 0.77;
  ens.seed = 123;
  ens.step_size = 0.034;
  ens.max_chain_mean_z = 1.2;
  ens.chains_consistent = true;
  for (int i = 0; i < 6; ++i) {
    std::vector<double> w(spec.dim());
    for (double& v : w) v = rng.normal();
    ens.samples.push_back({std::move(w), rng.normal()});
  }

  const auto doc = bnn_to_json(spec, ens);
  REQUIRE(doc.at("version") == "bnn-v1");

  const BnnModel model = bnn_from_json(doc);
  REQUIRE(model.spec.input_dim == 3);
  REQUIRE(model.spec.hidden == std::vector<std::size_t>{4, 2});
  REQUIRE(model.spec.prior_std == 1.5);
  REQUIRE(model.ensemble.samples.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    REQUIRE(model.ensemble.samples[i].w == ens.samples[i].w);
    REQUIRE(model.ensemble.samples[i].log_joint == ens.samples[i].log_joint);
  }
  REQUIRE(model.ensemble.acceptance_rate == 0.77);
}
