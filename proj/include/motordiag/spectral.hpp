#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "motordiag/audio.hpp"
#include "motordiag/error.hpp"

namespace motordiag {

// Magnitude spectrum over a contiguous frequency band. Bin k sits at
// lo_hz + k * bin_hz; hi_hz is the exclusive upper band edge.
struct Spectrum {
  std::vector<double> magnitudes;
  double bin_hz = 0.0;
  double lo_hz = 0.0;
  double hi_hz = 0.0;

  double frequency_of(std::size_t bin) const { return lo_hz + bin * bin_hz; }
};

// Fixed-length pooled feature vector; scale_reference is the dataset-global
// magnitude that normalization divided by (1 before normalization).
struct FeatureVector {
  std::vector<double> values;
  std::optional<ClassLabel> label;
  double scale_reference = 1.0;
};

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

namespace detail {

// Iterative radix-2 Cooley-Tukey; size must be a power of two.
inline void fft_in_place(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  if (n <= 1) return;

  // bit-reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }

  constexpr double kPi = 3.14159265358979323846;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = (inverse ? 2.0 : -2.0) * kPi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(angle), std::sin(angle));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= static_cast<double>(n);
  }
}

}  // namespace detail

// DFT of the input zero-padded to the next power of two.
inline std::vector<std::complex<double>> fft(std::span<const double> samples) {
  if (samples.empty()) throw EmptyInput("fft of empty signal");
  std::vector<std::complex<double>> a(next_pow2(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) a[i] = samples[i];
  detail::fft_in_place(a, false);
  return a;
}

// Inverse DFT (including the 1/N factor); input size must be a power of two.
inline std::vector<std::complex<double>> ifft(
    std::span<const std::complex<double>> spectrum) {
  if (spectrum.empty()) throw EmptyInput("ifft of empty spectrum");
  std::vector<std::complex<double>> a(spectrum.begin(), spectrum.end());
  if (a.size() != next_pow2(a.size())) {
    throw EmptyInput("ifft size must be a power of two");
  }
  detail::fft_in_place(a, true);
  return a;
}

// |FFT| over the first half of bins (real-input symmetry).
inline Spectrum magnitude_spectrum(const AudioClip& clip) {
  const auto full = fft(clip.samples);
  const std::size_t padded = full.size();
  Spectrum s;
  s.bin_hz = static_cast<double>(clip.sample_rate_hz) / static_cast<double>(padded);
  s.lo_hz = 0.0;
  const std::size_t half = std::max<std::size_t>(padded / 2, 1);
  s.magnitudes.resize(half);
  for (std::size_t k = 0; k < half; ++k) s.magnitudes[k] = std::abs(full[k]);
  s.hi_hz = s.bin_hz * static_cast<double>(half);
  return s;
}

// Keeps bins whose frequency lies in [lo_hz, min(hi_hz, Nyquist)].
inline Spectrum band_limit(const Spectrum& spectrum, double lo_hz = 16.0,
                           double hi_hz = 20000.0) {
  const double top = std::min(hi_hz, spectrum.hi_hz);
  std::size_t first = spectrum.magnitudes.size();
  std::size_t last = 0;
  for (std::size_t k = 0; k < spectrum.magnitudes.size(); ++k) {
    const double f = spectrum.frequency_of(k);
    if (f >= lo_hz && f <= top) {
      first = std::min(first, k);
      last = k;
    }
  }
  if (first >= spectrum.magnitudes.size()) {
    throw EmptyBand("no spectrum bins inside [" + std::to_string(lo_hz) + ", " +
                    std::to_string(hi_hz) + "] Hz");
  }
  Spectrum out;
  out.bin_hz = spectrum.bin_hz;
  out.lo_hz = spectrum.frequency_of(first);
  out.hi_hz = spectrum.frequency_of(last) + spectrum.bin_hz;
  out.magnitudes.assign(spectrum.magnitudes.begin() + static_cast<std::ptrdiff_t>(first),
                        spectrum.magnitudes.begin() + static_cast<std::ptrdiff_t>(last + 1));
  return out;
}

// Pools a spectrum to exactly F values: contiguous groups whose sizes differ
// by at most one, each reduced to its mean. When there are fewer bins than F
// the magnitudes are linearly interpolated up to F.
inline FeatureVector pool_to_features(const Spectrum& spectrum, std::size_t F = 2025) {
  const std::size_t n = spectrum.magnitudes.size();
  if (n == 0) throw EmptyInput("pooling an empty spectrum");
  if (F == 0) throw EmptyInput("feature count must be positive");

  FeatureVector fv;
  fv.values.resize(F);
  if (n >= F) {
    for (std::size_t i = 0; i < F; ++i) {
      const std::size_t begin = i * n / F;
      const std::size_t end = (i + 1) * n / F;
      double acc = 0.0;
      for (std::size_t k = begin; k < end; ++k) acc += spectrum.magnitudes[k];
      fv.values[i] = acc / static_cast<double>(end - begin);
    }
  } else if (F == 1 || n == 1) {
    std::fill(fv.values.begin(), fv.values.end(), spectrum.magnitudes[0]);
  } else {
    for (std::size_t i = 0; i < F; ++i) {
      const double p = static_cast<double>(i) * static_cast<double>(n - 1) /
                       static_cast<double>(F - 1);
      const auto k = static_cast<std::size_t>(p);
      const double frac = p - static_cast<double>(k);
      const double a = spectrum.magnitudes[k];
      const double b = spectrum.magnitudes[std::min(k + 1, n - 1)];
      fv.values[i] = a + frac * (b - a);
    }
  }
  return fv;
}

// Divides every vector by the single global maximum absolute value across
// the list and records that maximum as scale_reference. An all-zero dataset
// is returned unchanged with scale_reference 1.
inline std::vector<FeatureVector> normalize_dataset(std::vector<FeatureVector> features) {
  double global_max = 0.0;
  for (const auto& fv : features) {
    for (double v : fv.values) global_max = std::max(global_max, std::abs(v));
  }
  const double scale = global_max > 0.0 ? global_max : 1.0;
  for (auto& fv : features) {
    if (global_max > 0.0) {
      for (double& v : fv.values) v /= scale;
    }
    fv.scale_reference = scale;
  }
  return features;
}

// End-to-end per-clip feature pipeline parameters.
struct FeatureConfig {
  std::size_t count = 2025;
  double lo_hz = 16.0;
  double hi_hz = 20000.0;
  double window_seconds = 1.0;
};

inline FeatureVector featurize_clip(const AudioClip& clip, const FeatureConfig& cfg) {
  FeatureVector fv = pool_to_features(
      band_limit(magnitude_spectrum(clip), cfg.lo_hz, cfg.hi_hz), cfg.count);
  fv.label = clip.label;
  return fv;
}

inline std::vector<FeatureVector> featurize_dataset(const LabeledDataset& dataset,
                                                    const FeatureConfig& cfg) {
  std::vector<FeatureVector> out;
  out.reserve(dataset.clips.size());
  for (const auto& clip : dataset.clips) out.push_back(featurize_clip(clip, cfg));
  return out;
}

// Sidecar metadata written next to a feature CSV so trained models can
// replay the exact pipeline on new audio.
struct FeatureMeta {
  FeatureConfig config;
  double scale_reference = 1.0;

  nlohmann::json to_json() const {
    return {{"version", "features-meta-v1"},
            {"count", config.count},
            {"lo_hz", config.lo_hz},
            {"hi_hz", config.hi_hz},
            {"window_seconds", config.window_seconds},
            {"scale_reference", scale_reference}};
  }

  static FeatureMeta from_json(const nlohmann::json& j) {
    FeatureMeta meta;
    meta.config.count = j.at("count").get<std::size_t>();
    meta.config.lo_hz = j.at("lo_hz").get<double>();
    meta.config.hi_hz = j.at("hi_hz").get<double>();
    meta.config.window_seconds = j.at("window_seconds").get<double>();
    meta.scale_reference = j.at("scale_reference").get<double>();
    return meta;
  }
};

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// CSV layout: header `f0..f{F-1},label`, one row per vector. The label cell
// holds the class name, or is empty for unlabeled vectors.
inline void write_features_csv(const std::filesystem::path& path,
                               const std::vector<FeatureVector>& features) {
  if (features.empty()) throw EmptyDataset("no feature vectors to write");
  std::ofstream out(path);
  if (!out) throw IoFailure("cannot open for write: " + path.string());

  const std::size_t F = features.front().values.size();
  for (std::size_t i = 0; i < F; ++i) out << 'f' << i << ',';
  out << "label\n";
  for (const auto& fv : features) {
    if (fv.values.size() != F) {
      throw DimensionMismatch("inconsistent feature widths in dataset");
    }
    for (double v : fv.values) out << detail::format_double(v) << ',';
    if (fv.label) out << to_string(fv.label->kind);
    out << '\n';
  }
  if (!out) throw IoFailure("write failed: " + path.string());
}

inline std::vector<FeatureVector> read_features_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open " + path.string());

  std::string header;
  if (!std::getline(in, header)) throw IoFailure("empty feature file " + path.string());
  std::size_t F = 0;
  for (char c : header) {
    if (c == ',') ++F;
  }
  if (F == 0) throw IoFailure("malformed feature header in " + path.string());

  std::vector<FeatureVector> features;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    FeatureVector fv;
    fv.values.reserve(F);
    std::size_t start = 0;
    for (std::size_t i = 0; i < F; ++i) {
      const auto comma = line.find(',', start);
      if (comma == std::string::npos) {
        throw IoFailure("short feature row in " + path.string());
      }
      fv.values.push_back(std::stod(line.substr(start, comma - start)));
      start = comma + 1;
    }
    const std::string label_str = line.substr(start);
    if (!label_str.empty()) {
      const auto kind = parse_class_kind(label_str);
      if (!kind) throw IoFailure("unknown label '" + label_str + "' in " + path.string());
      fv.label = ClassLabel{*kind};
    }
    features.push_back(std::move(fv));
  }
  if (features.empty()) throw EmptyDataset("no feature rows in " + path.string());
  return features;
}

inline std::filesystem::path feature_meta_path(const std::filesystem::path& csv_path) {
  std::filesystem::path p = csv_path;
  p += ".meta.json";
  return p;
}

inline void write_feature_meta(const std::filesystem::path& csv_path,
                               const FeatureMeta& meta) {
  std::ofstream out(feature_meta_path(csv_path));
  if (!out) throw IoFailure("cannot write feature metadata");
  out << meta.to_json().dump(2) << '\n';
}

inline std::optional<FeatureMeta> read_feature_meta(
    const std::filesystem::path& csv_path) {
  std::ifstream in(feature_meta_path(csv_path));
  if (!in) return std::nullopt;
  nlohmann::json j;
  in >> j;
  return FeatureMeta::from_json(j);
}

}  // namespace motordiag
