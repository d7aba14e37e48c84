// Command-line front end: synth | featurize | train | evaluate | predict |
// report. One master seed drives every stage; flags override config-file
// values, which override the MOTOR_DIAG_SEED environment variable, which
// overrides built-in defaults.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "motordiag/audio.hpp"
#include "motordiag/bnn.hpp"
#include "motordiag/dnn.hpp"
#include "motordiag/eval.hpp"
#include "motordiag/nn.hpp"
#include "motordiag/spectral.hpp"
#include "motordiag/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace motordiag;

namespace {

enum class SamplerKind { Hmc, Mh };

struct RunConfig {
  std::uint64_t seed = 0;

  SynthSpec synth;
  std::map<ClassKind, int> synth_counts;  // empty means clips_per_class for all

  FeatureConfig features;       // deterministic-network path, F = 2025
  std::size_t bnn_features = 5; // Bayesian path pools to this width

  DnnTrainConfig dnn;
  BnnSpec bnn_spec;
  SamplerKind bnn_sampler = SamplerKind::Hmc;
  HmcConfig hmc{.draws = 300, .warmup = 300, .leapfrog_steps = 20,
                .step_size = 0.05, .chains = 4, .seed = 0};
  MhConfig mh{.steps = 60000, .warmup = 10000, .thin = 10, .step_size = 0.1,
              .chains = 4, .seed = 0};

  int trials = 100;
  double ratio = 0.8;
  double threshold = 0.5;
};

[[noreturn]] void config_error(const std::string& message) {
  throw CLI::ValidationError("config", message);
}

void reject_unknown(const json& object, const std::set<std::string>& known,
                    const std::string& where) {
  for (const auto& [key, value] : object.items()) {
    if (!known.count(key)) {
      config_error("unknown key '" + key + "' in " + where);
    }
  }
}

template <class T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void apply_config_file(RunConfig& cfg, const fs::path& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot open config file " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    config_error(std::string("config parse error: ") + e.what());
  }

  reject_unknown(doc, {"seed", "synth", "features", "dnn", "bnn", "eval"}, "config");
  maybe(doc, "seed", cfg.seed);

  if (doc.contains("synth")) {
    const json& s = doc.at("synth");
    reject_unknown(s, {"sample_rate_hz", "duration_s", "base_hz", "clips_per_class",
                       "noise_std", "counts"},
                   "synth");
    maybe(s, "sample_rate_hz", cfg.synth.sample_rate_hz);
    maybe(s, "duration_s", cfg.synth.duration_s);
    maybe(s, "base_hz", cfg.synth.base_hz);
    maybe(s, "clips_per_class", cfg.synth.clips_per_class);
    maybe(s, "noise_std", cfg.synth.noise_std);
    if (s.contains("counts")) {
      for (const auto& [name, value] : s.at("counts").items()) {
        const auto kind = parse_class_kind(name);
        if (!kind) config_error("unknown class '" + name + "' in synth.counts");
        cfg.synth_counts[*kind] = value.get<int>();
      }
    }
  }

  if (doc.contains("features")) {
    const json& f = doc.at("features");
    reject_unknown(f, {"count", "lo_hz", "hi_hz", "window_seconds"}, "features");
    maybe(f, "count", cfg.features.count);
    maybe(f, "lo_hz", cfg.features.lo_hz);
    maybe(f, "hi_hz", cfg.features.hi_hz);
    maybe(f, "window_seconds", cfg.features.window_seconds);
  }

  if (doc.contains("dnn")) {
    const json& d = doc.at("dnn");
    reject_unknown(d, {"epochs", "learning_rate", "lambda", "batch_size", "momentum",
                       "optimizer", "likelihood"},
                   "dnn");
    maybe(d, "epochs", cfg.dnn.epochs);
    maybe(d, "learning_rate", cfg.dnn.learning_rate);
    maybe(d, "lambda", cfg.dnn.lambda);
    maybe(d, "batch_size", cfg.dnn.batch_size);
    maybe(d, "momentum", cfg.dnn.momentum);
    if (d.contains("optimizer")) {
      const std::string name = d.at("optimizer").get<std::string>();
      if (name == "sgd") cfg.dnn.optimizer = Optimizer::Sgd;
      else if (name == "sgd_momentum") cfg.dnn.optimizer = Optimizer::SgdMomentum;
      else config_error("unknown optimizer '" + name + "'");
    }
    if (d.contains("likelihood")) {
      const auto lik = parse_likelihood(d.at("likelihood").get<std::string>());
      if (!lik) config_error("unknown dnn likelihood");
      cfg.dnn.likelihood = *lik;
    }
  }

  if (doc.contains("bnn")) {
    const json& b = doc.at("bnn");
    reject_unknown(b, {"hidden", "prior_std", "likelihood", "features", "sampler",
                       "draws", "warmup", "leapfrog_steps", "step_size", "chains",
                       "steps", "thin"},
                   "bnn");
    maybe(b, "hidden", cfg.bnn_spec.hidden);
    maybe(b, "prior_std", cfg.bnn_spec.prior_std);
    maybe(b, "features", cfg.bnn_features);
    if (b.contains("likelihood")) {
      const auto lik = parse_likelihood(b.at("likelihood").get<std::string>());
      if (!lik) config_error("unknown bnn likelihood");
      cfg.bnn_spec.likelihood = *lik;
    }
    if (b.contains("sampler")) {
      const std::string name = b.at("sampler").get<std::string>();
      if (name == "hmc") cfg.bnn_sampler = SamplerKind::Hmc;
      else if (name == "mh") cfg.bnn_sampler = SamplerKind::Mh;
      else config_error("unknown sampler '" + name + "'");
    }
    maybe(b, "draws", cfg.hmc.draws);
    maybe(b, "warmup", cfg.hmc.warmup);
    maybe(b, "leapfrog_steps", cfg.hmc.leapfrog_steps);
    maybe(b, "step_size", cfg.hmc.step_size);
    maybe(b, "chains", cfg.hmc.chains);
    maybe(b, "steps", cfg.mh.steps);
    maybe(b, "thin", cfg.mh.thin);
    // MH shares the warmup/step/chain knobs
    cfg.mh.warmup = std::min(cfg.hmc.warmup * 10, cfg.mh.steps / 2);
    cfg.mh.step_size = cfg.hmc.step_size;
    cfg.mh.chains = cfg.hmc.chains;
  }

  if (doc.contains("eval")) {
    const json& e = doc.at("eval");
    reject_unknown(e, {"trials", "ratio", "threshold"}, "eval");
    maybe(e, "trials", cfg.trials);
    maybe(e, "ratio", cfg.ratio);
    maybe(e, "threshold", cfg.threshold);
  }
}

RunConfig load_base_config(int argc, char** argv) {
  RunConfig cfg;
  if (const char* env = std::getenv("MOTOR_DIAG_SEED")) {
    cfg.seed = std::strtoull(env, nullptr, 10);
  }
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string_view(argv[i]) == "--config") {
      apply_config_file(cfg, argv[i + 1]);
    }
  }
  return cfg;
}

EvalConfig make_eval_config(const RunConfig& cfg) {
  EvalConfig eval;
  eval.ratio = cfg.ratio;
  eval.threshold = cfg.threshold;
  eval.dnn = cfg.dnn;
  eval.bnn_sampler = cfg.hmc;
  eval.bnn_spec = cfg.bnn_spec;
  return eval;
}

json feature_meta_extras(const FeatureMeta& meta) {
  return {{"features", meta.to_json()}};
}

std::vector<TrainingExample> as_examples(const std::vector<FeatureVector>& data) {
  std::vector<TrainingExample> out;
  out.reserve(data.size());
  for (const auto& fv : data) {
    if (!fv.label) throw EmptyDataset("feature row without a label");
    out.push_back({std::span<const double>(fv.values),
                   static_cast<double>(fv.label->binary())});
  }
  return out;
}

// ---------------------------------------------------------------- synth ----

struct SynthArgs {
  std::string out;
};

int cmd_synth(const RunConfig& cfg, const SynthArgs& args) {
  SynthSpec spec = cfg.synth;
  spec.seed = cfg.seed;
  const auto dataset = cfg.synth_counts.empty()
                           ? gen_dataset(spec)
                           : gen_dataset(spec, cfg.synth_counts);
  const fs::path manifest = write_dataset(dataset, args.out);
  std::printf("wrote %zu clips under %s\n", dataset.clips.size(), args.out.c_str());
  std::printf("%s\n", manifest.string().c_str());
  return 0;
}

// ------------------------------------------------------------ featurize ----

struct FeaturizeArgs {
  std::string in;
  std::string out;
  std::string manifest;
};

int cmd_featurize(const RunConfig& cfg, const FeaturizeArgs& args) {
  std::optional<fs::path> manifest;
  if (!args.manifest.empty()) {
    manifest = fs::path(args.manifest);
  } else if (fs::exists(fs::path(args.in) / "manifest.csv")) {
    manifest = fs::path(args.in) / "manifest.csv";
  }

  const LabeledDataset dataset =
      load_dataset(args.in, manifest, cfg.features.window_seconds);
  auto features = normalize_dataset(featurize_dataset(dataset, cfg.features));

  write_features_csv(args.out, features);
  FeatureMeta meta;
  meta.config = cfg.features;
  meta.scale_reference = features.front().scale_reference;
  write_feature_meta(args.out, meta);

  std::printf("wrote %zu feature rows (F=%zu) to %s\n", features.size(),
              cfg.features.count, args.out.c_str());
  return 0;
}

// ---------------------------------------------------------------- train ----

struct TrainArgs {
  std::string model;
  std::string features;
  std::string out;
  std::string curve;
};

int cmd_train(const RunConfig& cfg, const TrainArgs& args) {
  const auto features = read_features_csv(args.features);
  const auto meta = read_feature_meta(args.features);

  json extras = json::object();
  if (meta) extras = feature_meta_extras(*meta);

  if (args.model == "dnn") {
    DnnTrainConfig train_cfg = cfg.dnn;
    train_cfg.seed = cfg.seed;
    train_cfg.record_curve = true;
    const auto result = train_dnn(features, train_cfg);
    save_model_json(args.out, mlp_to_json(result.params, extras));

    fs::path curve_path = args.curve.empty()
                              ? fs::path(args.out).replace_extension(".curve.csv")
                              : fs::path(args.curve);
    std::ofstream curve(curve_path);
    if (!curve) throw IoFailure("cannot write " + curve_path.string());
    curve << "epoch,loss\n";
    for (std::size_t e = 0; e < result.loss_curve.size(); ++e) {
      curve << e << ',' << detail::format_double(result.loss_curve[e]) << '\n';
    }
    std::printf("trained dnn on %zu rows; model %s, curve %s\n", features.size(),
                args.out.c_str(), curve_path.string().c_str());
    return 0;
  }

  BnnSpec spec = cfg.bnn_spec;
  spec.input_dim = features.front().values.size();
  const auto examples = as_examples(features);

  PosteriorEnsemble ensemble;
  if (cfg.bnn_sampler == SamplerKind::Hmc) {
    HmcConfig sampler = cfg.hmc;
    sampler.seed = cfg.seed;
    ensemble = sample_posterior_hmc(spec, examples, sampler);
  } else {
    MhConfig sampler = cfg.mh;
    sampler.seed = cfg.seed;
    ensemble = sample_posterior_mh(spec, examples, sampler);
  }
  save_model_json(args.out, bnn_to_json(spec, ensemble, extras));
  std::printf("sampled bnn posterior on %zu rows: %zu draws over %d chains, "
              "acceptance %.3f; model %s\n",
              features.size(), ensemble.samples.size(), ensemble.chains,
              ensemble.acceptance_rate, args.out.c_str());
  if (!ensemble.chains_consistent) {
    std::printf("note: chain means disagree beyond 3 standard errors "
                "(max z = %.2f)\n", ensemble.max_chain_mean_z);
  }
  return 0;
}

// ------------------------------------------------------------- evaluate ----

struct EvaluateArgs {
  std::string model;
  std::string out;
  std::string data;
  std::string manifest;
  double imbalance = -1.0;
};

int cmd_evaluate(const RunConfig& cfg, const EvaluateArgs& args) {
  const EvalConfig eval = make_eval_config(cfg);

  if (args.imbalance > 0.0) {
    SynthSpec spec = cfg.synth;
    spec.seed = cfg.seed;
    ImbalanceFeatureConfig features;
    features.dnn = cfg.features;
    features.bnn = cfg.features;
    features.bnn.count = cfg.bnn_features;
    const auto report =
        imbalance_experiment(spec, args.imbalance, cfg.trials, cfg.seed, eval, features);
    const fs::path path = emit_imbalance_report(report, args.out);
    std::printf("imbalance report: %s\n", path.string().c_str());
    return 0;
  }

  // dataset: synthetic by default, user recordings with --data
  LabeledDataset dataset;
  if (!args.data.empty()) {
    std::optional<fs::path> manifest;
    if (!args.manifest.empty()) {
      manifest = fs::path(args.manifest);
    } else if (fs::exists(fs::path(args.data) / "manifest.csv")) {
      manifest = fs::path(args.data) / "manifest.csv";
    }
    dataset = load_dataset(args.data, manifest, cfg.features.window_seconds);
  } else {
    SynthSpec spec = cfg.synth;
    spec.seed = cfg.seed;
    dataset = cfg.synth_counts.empty() ? gen_dataset(spec)
                                       : gen_dataset(spec, cfg.synth_counts);
  }

  FeatureConfig feature_cfg = cfg.features;
  const ModelKind kind = args.model == "dnn" ? ModelKind::Dnn : ModelKind::Bnn;
  if (kind == ModelKind::Bnn) feature_cfg.count = cfg.bnn_features;
  const auto features = normalize_dataset(featurize_dataset(dataset, feature_cfg));

  const auto report = run_trials(kind, features, cfg.trials, cfg.seed, eval);

  if (kind == ModelKind::Bnn) {
    // histogram the predictive draws over the first trial's test split
    const SplitIndices parts = split(features, eval.ratio, cfg.seed);
    std::vector<TrainingExample> train;
    for (std::size_t i : parts.train) {
      train.push_back({std::span<const double>(features[i].values),
                       static_cast<double>(features[i].label->binary())});
    }
    BnnSpec spec = eval.bnn_spec;
    spec.input_dim = features.front().values.size();
    HmcConfig sampler = eval.bnn_sampler;
    sampler.seed = derive_seed(cfg.seed, 0xb771ULL);
    const auto ensemble = sample_posterior_hmc(spec, train, sampler);
    std::vector<FeatureVector> test_set;
    for (std::size_t i : parts.test) test_set.push_back(features[i]);
    const auto histograms = output_distribution_by_class(ensemble, spec, test_set);
    const fs::path path = emit_report(report, args.out, &histograms);
    std::printf("mean accuracy %.4f over %d trials; report %s\n",
                report.mean_accuracy, cfg.trials, path.string().c_str());
    return 0;
  }

  const fs::path path = emit_report(report, args.out);
  std::printf("mean accuracy %.4f over %d trials; report %s\n", report.mean_accuracy,
              cfg.trials, path.string().c_str());
  return 0;
}

// -------------------------------------------------------------- predict ----

struct PredictArgs {
  std::string model;
  std::vector<std::string> wavs;
  std::size_t features_override = 0;
};

FeatureMeta meta_from_model(const json& doc, const RunConfig& cfg) {
  if (doc.contains("features")) return FeatureMeta::from_json(doc.at("features"));
  FeatureMeta meta;  // fall back to the configured pipeline, unit scale
  meta.config = cfg.features;
  return meta;
}

std::vector<FeatureVector> featurize_for_predict(const AudioClip& clip,
                                                 const FeatureMeta& meta) {
  std::vector<AudioClip> windows = segment(clip, meta.config.window_seconds);
  if (windows.empty()) windows.push_back(clip);  // shorter than one window
  std::vector<FeatureVector> out;
  for (const auto& w : windows) {
    FeatureVector fv = featurize_clip(w, meta.config);
    for (double& v : fv.values) v /= meta.scale_reference;
    fv.scale_reference = meta.scale_reference;
    out.push_back(std::move(fv));
  }
  return out;
}

int cmd_predict(const RunConfig& cfg, const PredictArgs& args) {
  const json doc = load_model_json(args.model);
  const std::string version = doc.value("version", "");
  const FeatureMeta meta = meta_from_model(doc, cfg);

  if (args.features_override != 0 && args.features_override != meta.config.count) {
    throw ModelFeatureMismatch(
        "model expects F=" + std::to_string(meta.config.count) +
        " but --features requested " + std::to_string(args.features_override));
  }

  if (version == "mlp-v1") {
    const MLPParams params = mlp_from_json(doc);
    if (params.input_dim() != meta.config.count) {
      throw ModelFeatureMismatch("model input width does not match its feature config");
    }
    for (const auto& wav : args.wavs) {
      const AudioClip clip = load_wav(wav);
      const auto windows = featurize_for_predict(clip, meta);
      double acc = 0.0;
      for (const auto& fv : windows) acc += predict_dnn(params, fv);
      const double prob = acc / static_cast<double>(windows.size());
      std::printf("%s,%.6f,%d\n", wav.c_str(), prob, classify(prob, cfg.threshold));
    }
    return 0;
  }
  if (version == "bnn-v1") {
    const BnnModel model = bnn_from_json(doc);
    if (model.spec.input_dim != meta.config.count) {
      throw ModelFeatureMismatch("model input width does not match its feature config");
    }
    for (const auto& wav : args.wavs) {
      const AudioClip clip = load_wav(wav);
      const auto windows = featurize_for_predict(clip, meta);
      PredictiveDistribution pooled;
      for (const auto& fv : windows) {
        const auto pred = posterior_predictive(model.ensemble, model.spec, fv);
        pooled.draws.insert(pooled.draws.end(), pred.draws.begin(), pred.draws.end());
      }
      const double ref = pooled.draws.front();
      double acc = 0.0;
      for (double d : pooled.draws) acc += d - ref;
      pooled.mean = ref + acc / static_cast<double>(pooled.draws.size());
      const auto result = predict_class_bnn(pooled, cfg.threshold);
      const auto [lo, hi] = pooled.credible_interval(0.9);
      std::printf("%s,%.6f,%d,%.6f,%.6f\n", wav.c_str(), pooled.mean, result.label, lo,
                  hi);
    }
    return 0;
  }
  throw IoFailure("unrecognized model document version '" + version + "'");
}

// --------------------------------------------------------------- report ----

int cmd_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open " + path);
  json doc;
  in >> doc;

  if (doc.value("kind", "") == std::string("imbalance")) {
    std::printf("imbalance comparison (healthy fraction %.3f, %d healthy vs %d fault)\n",
                doc.at("skew").get<double>(), doc.at("healthy_count").get<int>(),
                doc.at("fault_count").get<int>());
    for (const char* kind : {"dnn", "bnn"}) {
      const json& side = doc.at(kind);
      std::printf("  %s: mean accuracy %.4f, median healthy recall %s, "
                  "median fault recall %s\n",
                  kind, side.at("mean_accuracy").get<double>(),
                  side.at("median_healthy_recall").is_null()
                      ? "n/a"
                      : std::to_string(side.at("median_healthy_recall").get<double>()).c_str(),
                  side.at("median_fault_recall").is_null()
                      ? "n/a"
                      : std::to_string(side.at("median_fault_recall").get<double>()).c_str());
    }
    return 0;
  }

  if (doc.value("version", "") != std::string("report-v1")) {
    throw IoFailure("not a report-v1 document: " + path);
  }
  std::printf("%s over %zu trials: mean accuracy %.4f (std %.4f)\n",
              doc.at("model_kind").get<std::string>().c_str(), doc.at("trials").size(),
              doc.at("mean_accuracy").get<double>(), doc.at("std_accuracy").get<double>());
  if (!doc.at("median_healthy_recall").is_null()) {
    std::printf("median healthy recall %.4f\n",
                doc.at("median_healthy_recall").get<double>());
  }
  if (!doc.at("median_fault_recall").is_null()) {
    std::printf("median fault recall %.4f\n", doc.at("median_fault_recall").get<double>());
  }
  for (const auto& trial : doc.at("trials")) {
    std::printf("  trial %lld seed %llu: tn=%lld fp=%lld fn=%lld tp=%lld acc=%.4f\n",
                trial.at("trial").get<long long>(),
                static_cast<unsigned long long>(trial.at("seed").get<std::uint64_t>()),
                trial.at("tn").get<long long>(), trial.at("fp").get<long long>(),
                trial.at("fn").get<long long>(), trial.at("tp").get<long long>(),
                trial.at("accuracy").get<double>());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Electric-motor fault detection from acoustic recordings"};
  app.require_subcommand(1);

  RunConfig cfg;
  try {
    cfg = load_base_config(argc, argv);
  } catch (const CLI::Error& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  }

  std::string config_path;
  app.add_option("--config", config_path, "JSON configuration file");
  app.add_option("--seed", cfg.seed, "Master seed")->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled dataset");
  SynthArgs synth_args;
  synth->add_option("--out", synth_args.out, "Output directory")->required();
  synth->add_option("--rate", cfg.synth.sample_rate_hz, "Sample rate in Hz")
      ->capture_default_str();
  synth->add_option("--duration", cfg.synth.duration_s, "Clip length in seconds")
      ->capture_default_str();
  synth->add_option("--base-hz", cfg.synth.base_hz, "Rotation fundamental in Hz")
      ->capture_default_str();
  synth->add_option("--clips", cfg.synth.clips_per_class, "Clips per class")
      ->capture_default_str();
  synth->add_option("--noise", cfg.synth.noise_std, "Gaussian noise level")
      ->capture_default_str();
  std::map<std::string, int> count_flags;
  for (ClassKind kind : kAllClassKinds) {
    const std::string name(to_string(kind));
    synth->add_option("--" + name, count_flags[name],
                      "Override clip count for class " + name);
  }

  // featurize
  auto* featurize = app.add_subcommand("featurize", "Turn a dataset into feature vectors");
  FeaturizeArgs feat_args;
  featurize->add_option("--in", feat_args.in, "Dataset directory")->required();
  featurize->add_option("--out", feat_args.out, "Output CSV path")->required();
  featurize->add_option("--manifest", feat_args.manifest, "Manifest file (default: <in>/manifest.csv when present)");
  featurize->add_option("--features", cfg.features.count, "Feature vector length")
      ->capture_default_str();
  featurize->add_option("--lo", cfg.features.lo_hz, "Band lower edge in Hz")
      ->capture_default_str();
  featurize->add_option("--hi", cfg.features.hi_hz, "Band upper edge in Hz")
      ->capture_default_str();
  featurize->add_option("--window", cfg.features.window_seconds, "Segment window in seconds")
      ->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Train a classifier on a feature CSV");
  TrainArgs train_args;
  train->add_option("--model", train_args.model, "Model kind: dnn or bnn")
      ->required()
      ->check(CLI::IsMember({"dnn", "bnn"}));
  train->add_option("--features", train_args.features, "Feature CSV path")->required();
  train->add_option("--out", train_args.out, "Model output path")->required();
  train->add_option("--curve", train_args.curve, "Learning-curve CSV path (dnn)");
  train->add_option("--epochs", cfg.dnn.epochs, "Training epochs (dnn)")
      ->capture_default_str();
  train->add_option("--lr", cfg.dnn.learning_rate, "Learning rate (dnn)")
      ->capture_default_str();
  train->add_option("--lambda", cfg.dnn.lambda, "L2 penalty strength (dnn)")
      ->capture_default_str();
  train->add_option("--batch", cfg.dnn.batch_size, "Mini-batch size (dnn)")
      ->capture_default_str();
  train->add_option("--momentum", cfg.dnn.momentum, "Momentum coefficient (dnn)")
      ->capture_default_str();
  std::string sampler_name = "hmc";
  train->add_option("--sampler", sampler_name, "Posterior sampler: hmc or mh (bnn)")
      ->check(CLI::IsMember({"hmc", "mh"}))
      ->capture_default_str();
  train->add_option("--draws", cfg.hmc.draws, "Kept draws per chain (bnn hmc)")
      ->capture_default_str();
  train->add_option("--warmup", cfg.hmc.warmup, "Warmup iterations per chain (bnn)")
      ->capture_default_str();
  train->add_option("--leapfrog", cfg.hmc.leapfrog_steps, "Leapfrog steps (bnn hmc)")
      ->capture_default_str();
  train->add_option("--step-size", cfg.hmc.step_size, "Initial step size (bnn)")
      ->capture_default_str();
  train->add_option("--chains", cfg.hmc.chains, "Chain count (bnn)")
      ->capture_default_str();
  train->add_option("--steps", cfg.mh.steps, "Total steps per chain (bnn mh)")
      ->capture_default_str();
  train->add_option("--thin", cfg.mh.thin, "Keep every thin-th draw (bnn mh)")
      ->capture_default_str();
  train->add_option("--prior-std", cfg.bnn_spec.prior_std, "Weight prior stddev (bnn)")
      ->capture_default_str();

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Repeated-trial evaluation protocol");
  EvaluateArgs eval_args;
  evaluate->add_option("--model", eval_args.model, "Model kind: dnn or bnn")
      ->check(CLI::IsMember({"dnn", "bnn"}));
  evaluate->add_option("--out", eval_args.out, "Report output directory")->required();
  evaluate->add_option("--trials", cfg.trials, "Number of random split trials")
      ->capture_default_str();
  evaluate->add_option("--ratio", cfg.ratio, "Train fraction per split")
      ->capture_default_str();
  evaluate->add_option("--data", eval_args.data,
                       "Evaluate user recordings from this directory instead of synthetic data");
  evaluate->add_option("--manifest", eval_args.manifest, "Manifest for --data");
  evaluate->add_option("--imbalance", eval_args.imbalance,
                       "Run the paired imbalance comparison at this healthy fraction");
  evaluate->add_option("--features", cfg.features.count, "Feature length (dnn path)")
      ->capture_default_str();
  evaluate->add_option("--bnn-features", cfg.bnn_features, "Feature length (bnn path)")
      ->capture_default_str();

  // predict
  auto* predict = app.add_subcommand("predict", "Classify WAV files with a trained model");
  PredictArgs predict_args;
  predict->add_option("--model", predict_args.model, "Model document path")->required();
  predict->add_option("wavs", predict_args.wavs, "WAV files to classify")->required();
  predict->add_option("--features", predict_args.features_override,
                      "Expected feature length (checked against the model)");
  predict->add_option("--threshold", cfg.threshold, "Fault decision threshold")
      ->capture_default_str();

  // report
  auto* report = app.add_subcommand("report", "Print a stored report");
  std::string report_path;
  report->add_option("path", report_path, "report JSON path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  // per-class count overrides arrive as flags
  for (const auto& [name, value] : count_flags) {
    const auto kind = parse_class_kind(name);
    if (kind && synth->count("--" + name) > 0) cfg.synth_counts[*kind] = value;
  }
  if (train->count("--sampler") > 0 || sampler_name != "hmc") {
    cfg.bnn_sampler = sampler_name == "mh" ? SamplerKind::Mh : SamplerKind::Hmc;
  }

  if (*evaluate && eval_args.model.empty() && eval_args.imbalance <= 0.0) {
    std::fprintf(stderr, "usage error: evaluate needs --model or --imbalance\n");
    return 1;
  }

  try {
    if (*synth) return cmd_synth(cfg, synth_args);
    if (*featurize) return cmd_featurize(cfg, feat_args);
    if (*train) return cmd_train(cfg, train_args);
    if (*evaluate) return cmd_evaluate(cfg, eval_args);
    if (*predict) return cmd_predict(cfg, predict_args);
    if (*report) return cmd_report(report_path);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
