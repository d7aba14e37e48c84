#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "motordiag/bnn.hpp"
#include "motordiag/dnn.hpp"
#include "motordiag/error.hpp"
#include "motordiag/rng.hpp"
#include "motordiag/spectral.hpp"
#include "motordiag/synth.hpp"

namespace motordiag {

// Binary confusion counts; the positive class is "fault".
struct ConfusionMatrix {
  std::int64_t tn = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tp = 0;

  std::int64_t total() const { return tn + fp + fn + tp; }

  double accuracy() const {
    return static_cast<double>(tn + tp) / static_cast<double>(total());
  }

  // Absent when the class is missing from the test set.
  std::optional<double> fault_recall() const {
    if (tp + fn == 0) return std::nullopt;
    return static_cast<double>(tp) / static_cast<double>(tp + fn);
  }

  std::optional<double> healthy_recall() const {
    if (tn + fp == 0) return std::nullopt;
    return static_cast<double>(tn) / static_cast<double>(tn + fp);
  }
};

inline ConfusionMatrix confusion(std::span<const int> predictions,
                                 std::span<const int> labels) {
  if (predictions.size() != labels.size() || predictions.empty()) {
    throw LengthMismatch("predictions and labels must have equal non-zero length");
  }
  ConfusionMatrix m;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (labels[i]) {
      predictions[i] ? ++m.tp : ++m.fn;
    } else {
      predictions[i] ? ++m.fp : ++m.tn;
    }
  }
  return m;
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Stratified random split. The train side gets exactly floor(ratio * n)
// items; per-class train counts start at floor(ratio * n_c) and the
// remaining slots go to the classes with the largest fractional parts, so
// each class stays within one clip of exact stratification. A class with at
// least two members keeps at least one item on each side when the totals
// allow it.
inline SplitIndices split(std::span<const ClassKind> labels, double ratio,
                          std::uint64_t seed) {
  if (labels.size() < 2) throw DatasetTooSmall("need at least 2 items to split");
  if (ratio <= 0.0 || ratio >= 1.0) throw std::invalid_argument("ratio must lie in (0, 1)");

  std::map<ClassKind, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);

  const auto train_total =
      static_cast<std::size_t>(std::floor(ratio * static_cast<double>(labels.size())));

  struct Alloc {
    ClassKind kind;
    std::size_t count;
    std::size_t take;
    double remainder;
  };
  std::vector<Alloc> allocs;
  std::size_t assigned = 0;
  for (const auto& [kind, idx] : members) {
    const double exact = ratio * static_cast<double>(idx.size());
    const auto base = static_cast<std::size_t>(std::floor(exact));
    allocs.push_back({kind, idx.size(), base, exact - static_cast<double>(base)});
    assigned += base;
  }
  std::stable_sort(allocs.begin(), allocs.end(),
                   [](const Alloc& a, const Alloc& b) { return a.remainder > b.remainder; });
  for (auto& a : allocs) {
    if (assigned >= train_total) break;
    if (a.take < a.count) {
      ++a.take;
      ++assigned;
    }
  }
  // Keep both sides non-empty for classes with >= 2 members where possible.
  for (auto& a : allocs) {
    if (a.count >= 2 && a.take == 0) {
      for (auto& donor : allocs) {
        if (&donor != &a && donor.take >= 2) {
          --donor.take;
          ++a.take;
          break;
        }
      }
    }
    if (a.count >= 2 && a.take == a.count) {
      for (auto& taker : allocs) {
        if (&taker != &a && taker.take + 1 < taker.count) {
          ++taker.take;
          --a.take;
          break;
        }
      }
    }
  }

  SplitIndices out;
  for (const auto& a : allocs) {
    auto idx = members[a.kind];
    Rng rng(derive_seed(seed, 0x5b117ULL, static_cast<std::uint64_t>(a.kind)));
    shuffle(idx, rng);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      (i < a.take ? out.train : out.test).push_back(idx[i]);
    }
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

inline SplitIndices split(const std::vector<FeatureVector>& dataset, double ratio,
                          std::uint64_t seed) {
  std::vector<ClassKind> labels;
  labels.reserve(dataset.size());
  for (const auto& fv : dataset) {
    if (!fv.label) throw EmptyDataset("split requires labeled vectors");
    labels.push_back(fv.label->kind);
  }
  return split(std::span<const ClassKind>(labels), ratio, seed);
}

enum class ModelKind { Dnn, Bnn };

inline std::string_view to_string(ModelKind k) {
  return k == ModelKind::Dnn ? "dnn" : "bnn";
}

struct EvalConfig {
  double ratio = 0.8;
  DnnTrainConfig dnn;
  HmcConfig bnn_sampler{.draws = 300, .warmup = 300, .leapfrog_steps = 20,
                        .step_size = 0.05, .chains = 4, .seed = 0};
  BnnSpec bnn_spec;  // input_dim is taken from the data at trial time
  double threshold = 0.5;

  nlohmann::json to_json() const {
    return {{"ratio", ratio},
            {"threshold", threshold},
            {"dnn",
             {{"epochs", dnn.epochs},
              {"learning_rate", dnn.learning_rate},
              {"lambda", dnn.lambda},
              {"batch_size", dnn.batch_size},
              {"optimizer", dnn.optimizer == Optimizer::SgdMomentum ? "sgd_momentum" : "sgd"},
              {"momentum", dnn.momentum},
              {"likelihood", std::string(to_string(dnn.likelihood))}}},
            {"bnn",
             {{"hidden", bnn_spec.hidden},
              {"prior_std", bnn_spec.prior_std},
              {"likelihood", std::string(to_string(bnn_spec.likelihood))},
              {"draws", bnn_sampler.draws},
              {"warmup", bnn_sampler.warmup},
              {"leapfrog_steps", bnn_sampler.leapfrog_steps},
              {"step_size", bnn_sampler.step_size},
              {"chains", bnn_sampler.chains}}}};
  }
};

struct TrialResult {
  std::uint64_t seed = 0;
  ConfusionMatrix matrix;
  double accuracy = 0.0;
};

struct ExperimentReport {
  ModelKind model_kind = ModelKind::Dnn;
  std::vector<TrialResult> trials;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // population standard deviation
  nlohmann::json config;
};

namespace detail {

inline std::optional<double> median(std::vector<double> values) {
  if (values.empty()) return std::nullopt;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

inline std::optional<double> median_healthy_recall(const ExperimentReport& report) {
  std::vector<double> values;
  for (const auto& t : report.trials) {
    if (const auto r = t.matrix.healthy_recall()) values.push_back(*r);
  }
  return median(std::move(values));
}

inline std::optional<double> median_fault_recall(const ExperimentReport& report) {
  std::vector<double> values;
  for (const auto& t : report.trials) {
    if (const auto r = t.matrix.fault_recall()) values.push_back(*r);
  }
  return median(std::move(values));
}

// Predictions for the test rows of one trial.
inline std::vector<int> trial_predictions(ModelKind kind,
                                          const std::vector<FeatureVector>& dataset,
                                          const SplitIndices& parts,
                                          std::uint64_t trial_seed,
                                          const EvalConfig& cfg) {
  std::vector<TrainingExample> train;
  train.reserve(parts.train.size());
  for (std::size_t i : parts.train) {
    train.push_back({std::span<const double>(dataset[i].values),
                     static_cast<double>(dataset[i].label->binary())});
  }

  std::vector<int> predictions;
  predictions.reserve(parts.test.size());
  if (kind == ModelKind::Dnn) {
    DnnTrainConfig train_cfg = cfg.dnn;
    train_cfg.seed = derive_seed(trial_seed, 0xd771ULL);
    train_cfg.record_curve = false;
    const auto trained = train_dnn(std::span<const TrainingExample>(train), train_cfg);
    for (std::size_t i : parts.test) {
      predictions.push_back(classify(predict_dnn(trained.params, dataset[i]), cfg.threshold));
    }
  } else {
    BnnSpec spec = cfg.bnn_spec;
    spec.input_dim = dataset.front().values.size();
    HmcConfig sampler_cfg = cfg.bnn_sampler;
    sampler_cfg.seed = derive_seed(trial_seed, 0xb771ULL);
    const auto ensemble =
        sample_posterior_hmc(spec, std::span<const TrainingExample>(train), sampler_cfg);
    for (std::size_t i : parts.test) {
      const auto pred = posterior_predictive(ensemble, spec, dataset[i]);
      predictions.push_back(predict_class_bnn(pred, cfg.threshold).label);
    }
  }
  return predictions;
}

}  // namespace detail

// The repeated-trial protocol: for each trial, split with seed
// base_seed + trial index, train the selected model kind with its
// configured defaults, and record the test confusion matrix.
inline ExperimentReport run_trials(ModelKind kind,
                                   const std::vector<FeatureVector>& dataset,
                                   int n_trials, std::uint64_t base_seed,
                                   const EvalConfig& cfg = {}) {
  if (n_trials < 1) throw std::invalid_argument("n_trials must be at least 1");
  if (dataset.empty()) throw EmptyDataset("evaluation dataset is empty");

  ExperimentReport report;
  report.model_kind = kind;
  report.config = cfg.to_json();
  report.config["model_kind"] = std::string(to_string(kind));
  report.config["n_trials"] = n_trials;
  report.config["base_seed"] = base_seed;

  std::vector<int> labels_test;
  for (int t = 0; t < n_trials; ++t) {
    const std::uint64_t trial_seed = base_seed + static_cast<std::uint64_t>(t);
    const SplitIndices parts = split(dataset, cfg.ratio, trial_seed);
    const auto predictions = detail::trial_predictions(kind, dataset, parts, trial_seed, cfg);

    labels_test.clear();
    for (std::size_t i : parts.test) labels_test.push_back(dataset[i].label->binary());
    const ConfusionMatrix m =
        confusion(std::span<const int>(predictions), std::span<const int>(labels_test));
    report.trials.push_back({trial_seed, m, m.accuracy()});
  }

  double mean = 0.0;
  for (const auto& t : report.trials) mean += t.accuracy;
  mean /= static_cast<double>(report.trials.size());
  double var = 0.0;
  for (const auto& t : report.trials) {
    const double d = t.accuracy - mean;
    var += d * d;
  }
  var /= static_cast<double>(report.trials.size());
  report.mean_accuracy = mean;
  report.std_accuracy = std::sqrt(var);
  return report;
}

// Paired comparison on a skewed synthetic dataset: both model kinds see
// identical splits. `skew` is the healthy fraction of the binary dataset;
// fault classes keep clips_per_class each and the healthy count is derived.
struct ImbalanceReport {
  double skew = 0.0;
  int healthy_count = 0;
  int fault_count = 0;
  ExperimentReport dnn;
  ExperimentReport bnn;
};

struct ImbalanceFeatureConfig {
  FeatureConfig dnn{.count = 2025};
  FeatureConfig bnn{.count = 5};
};

inline ImbalanceReport imbalance_experiment(const SynthSpec& spec, double skew,
                                            int n_trials, std::uint64_t base_seed,
                                            const EvalConfig& cfg = {},
                                            const ImbalanceFeatureConfig& features = {}) {
  if (skew <= 0.0 || skew >= 1.0) throw std::invalid_argument("skew must lie in (0, 1)");

  const int fault_total = 4 * spec.clips_per_class;
  const int healthy =
      std::max(1, static_cast<int>(std::lround(skew / (1.0 - skew) * fault_total)));
  std::map<ClassKind, int> counts;
  counts[ClassKind::Healthy] = healthy;

  const LabeledDataset dataset = gen_dataset(spec, counts);
  const auto dnn_features = normalize_dataset(featurize_dataset(dataset, features.dnn));
  const auto bnn_features = normalize_dataset(featurize_dataset(dataset, features.bnn));

  ImbalanceReport report;
  report.skew = skew;
  report.healthy_count = healthy;
  report.fault_count = fault_total;
  report.dnn = run_trials(ModelKind::Dnn, dnn_features, n_trials, base_seed, cfg);
  report.bnn = run_trials(ModelKind::Bnn, bnn_features, n_trials, base_seed, cfg);
  return report;
}

namespace detail {

inline nlohmann::json optional_to_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}

}  // namespace detail

inline nlohmann::json report_to_json(const ExperimentReport& report) {
  nlohmann::json trials = nlohmann::json::array();
  for (std::size_t t = 0; t < report.trials.size(); ++t) {
    const auto& trial = report.trials[t];
    trials.push_back({{"trial", t},
                      {"seed", trial.seed},
                      {"tn", trial.matrix.tn},
                      {"fp", trial.matrix.fp},
                      {"fn", trial.matrix.fn},
                      {"tp", trial.matrix.tp},
                      {"accuracy", trial.accuracy},
                      {"healthy_recall", detail::optional_to_json(trial.matrix.healthy_recall())},
                      {"fault_recall", detail::optional_to_json(trial.matrix.fault_recall())}});
  }
  return {{"version", "report-v1"},
          {"model_kind", std::string(to_string(report.model_kind))},
          {"n_trials", report.trials.size()},
          {"mean_accuracy", report.mean_accuracy},
          {"std_accuracy", report.std_accuracy},
          {"median_healthy_recall",
           detail::optional_to_json(detail::median_healthy_recall(report))},
          {"median_fault_recall",
           detail::optional_to_json(detail::median_fault_recall(report))},
          {"trials", trials},
          {"config", report.config}};
}

// Writes report.json plus a per-trial CSV; optional histogram CSVs are
// referenced from the JSON by relative path. Returns the JSON path.
inline std::filesystem::path emit_report(
    const ExperimentReport& report, const std::filesystem::path& out_dir,
    const std::vector<ClassHistogram>* histograms = nullptr) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);

  const fs::path csv_path = out_dir / "trials.csv";
  {
    std::ofstream csv(csv_path);
    if (!csv) throw IoFailure("cannot write " + csv_path.string());
    csv << "trial,seed,tn,fp,fn,tp,accuracy\n";
    for (std::size_t t = 0; t < report.trials.size(); ++t) {
      const auto& trial = report.trials[t];
      csv << t << ',' << trial.seed << ',' << trial.matrix.tn << ',' << trial.matrix.fp
          << ',' << trial.matrix.fn << ',' << trial.matrix.tp << ','
          << detail::format_double(trial.accuracy) << '\n';
    }
  }

  nlohmann::json doc = report_to_json(report);
  doc["artifacts"] = {{"trials_csv", "trials.csv"}};
  if (histograms != nullptr) {
    const fs::path hist_path = out_dir / "histograms.csv";
    write_histograms_csv(hist_path, *histograms);
    doc["artifacts"]["histograms_csv"] = "histograms.csv";
  }

  const fs::path json_path = out_dir / "report.json";
  std::ofstream out(json_path);
  if (!out) throw IoFailure("cannot write " + json_path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw IoFailure("report write failed");
  return json_path;
}

inline nlohmann::json read_report(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw IoFailure("cannot open " + json_path.string());
  nlohmann::json doc;
  in >> doc;
  if (doc.value("version", "") != std::string("report-v1")) {
    throw IoFailure("not a report-v1 document");
  }
  return doc;
}

inline std::filesystem::path emit_imbalance_report(const ImbalanceReport& report,
                                                   const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  emit_report(report.dnn, out_dir / "dnn");
  emit_report(report.bnn, out_dir / "bnn");

  nlohmann::json doc = {
      {"version", "report-v1"},
      {"kind", "imbalance"},
      {"skew", report.skew},
      {"healthy_count", report.healthy_count},
      {"fault_count", report.fault_count},
      {"dnn",
       {{"report", "dnn/report.json"},
        {"mean_accuracy", report.dnn.mean_accuracy},
        {"median_healthy_recall",
         detail::optional_to_json(detail::median_healthy_recall(report.dnn))},
        {"median_fault_recall",
         detail::optional_to_json(detail::median_fault_recall(report.dnn))}}},
      {"bnn",
       {{"report", "bnn/report.json"},
        {"mean_accuracy", report.bnn.mean_accuracy},
        {"median_healthy_recall",
         detail::optional_to_json(detail::median_healthy_recall(report.bnn))},
        {"median_fault_recall",
         detail::optional_to_json(detail::median_fault_recall(report.bnn))}}}};

  const fs::path json_path = out_dir / "imbalance.json";
  std::ofstream out(json_path);
  if (!out) throw IoFailure("cannot write " + json_path.string());
  out << doc.dump(2) << '\n';
  return json_path;
}

// One-sided Mann-Whitney rank-sum p-value for the hypothesis that draws
// from `greater` are stochastically larger than draws from `lesser`.
// Normal approximation with tie correction and continuity correction.
inline double mann_whitney_p_greater(std::span<const double> greater,
                                     std::span<const double> lesser) {
  const std::size_t n1 = greater.size();
  const std::size_t n2 = lesser.size();
  if (n1 == 0 || n2 == 0) throw LengthMismatch("rank test needs non-empty samples");

  struct Entry {
    double value;
    bool from_greater;
  };
  std::vector<Entry> pooled;
  pooled.reserve(n1 + n2);
  for (double v : greater) pooled.push_back({v, true});
  for (double v : lesser) pooled.push_back({v, false});
  std::sort(pooled.begin(), pooled.end(),
            [](const Entry& a, const Entry& b) { return a.value < b.value; });

  // Average ranks across ties; accumulate the tie correction term.
  double rank_sum_greater = 0.0;
  double tie_term = 0.0;
  std::size_t i = 0;
  while (i < pooled.size()) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j].value == pooled[i].value) ++j;
    const double tied = static_cast<double>(j - i);
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k) {
      if (pooled[k].from_greater) rank_sum_greater += avg_rank;
    }
    tie_term += tied * tied * tied - tied;
    i = j;
  }

  const double n1d = static_cast<double>(n1);
  const double n2d = static_cast<double>(n2);
  const double n = n1d + n2d;
  const double u = rank_sum_greater - n1d * (n1d + 1.0) / 2.0;
  const double mean_u = n1d * n2d / 2.0;
  const double var_u =
      n1d * n2d / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (var_u <= 0.0) return 1.0;  // all values identical
  const double z = (u - mean_u - 0.5) / std::sqrt(var_u);
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

}  // namespace motordiag
