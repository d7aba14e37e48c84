#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "motordiag/audio.hpp"
#include "motordiag/error.hpp"
#include "motordiag/rng.hpp"

namespace motordiag {

struct SynthSpec {
  std::uint32_t sample_rate_hz = 44100;
  double duration_s = 1.0;
  double base_hz = 120.0;  // rotation fundamental
  int clips_per_class = 30;
  double noise_std = 0.01;
  std::uint64_t seed = 0;
};

namespace synth_detail {

inline constexpr int kHarmonics = 6;
inline constexpr double kBaseAmplitude = 0.35;
inline constexpr double kAmplitudeDecay = 0.6;
inline constexpr double kSidebandOffsetHz = 7.0;
inline constexpr double kSidebandRelAmplitude = 0.4;
inline constexpr double kFiveBladesModDepth = 0.25;
inline constexpr double kTenBladesModDepth = 0.5;
inline constexpr double kFiveBladesNoiseMult = 2.0;
inline constexpr double kTenBladesNoiseMult = 3.0;
inline constexpr double kBrushRmsFactor = 0.3;
inline constexpr double kFrequencyJitter = 0.02;
inline constexpr double kPi = 3.14159265358979323846;

inline double harmonic_amplitude(int k) {
  return kBaseAmplitude * std::pow(kAmplitudeDecay, k - 1);
}

// Expected RMS of the healthy signal model; used to size the brush-fault
// noise floor.
inline double healthy_rms(double noise_std) {
  double power = noise_std * noise_std;
  for (int k = 1; k <= kHarmonics; ++k) {
    const double a = harmonic_amplitude(k);
    power += a * a / 2.0;
  }
  return std::sqrt(power);
}

}  // namespace synth_detail

// Deterministic surrogate recording for one (class, index) pair.
//
//   Healthy          6-harmonic stack of base_hz, geometric amplitude decay,
//                    plus Gaussian noise
//   GearFault        healthy plus +/-7 Hz sidebands around each harmonic at
//                    40% relative amplitude
//   FiveBladesFault  healthy with 25% amplitude modulation at base_hz/5 and
//                    doubled noise
//   TenBladesFault   50% modulation and tripled noise
//   ShiftedBrushFault noise only at 0.3x the healthy RMS (motor off)
//
// Each clip gets its own +/-2% frequency jitter and random phases, seeded by
// (seed, label, index). Samples are clamped to [-1, 1].
inline AudioClip gen_clip(const SynthSpec& spec, ClassLabel label, int index) {
  namespace sd = synth_detail;
  if (spec.base_hz >= spec.sample_rate_hz / 2.0) {
    throw std::invalid_argument("base_hz must sit below the Nyquist frequency");
  }
  if (spec.duration_s <= 0.0 || spec.sample_rate_hz == 0) {
    throw std::invalid_argument("duration and sample rate must be positive");
  }
  Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(label.kind),
                      static_cast<std::uint64_t>(index)));

  const double jitter = rng.uniform(1.0 - sd::kFrequencyJitter, 1.0 + sd::kFrequencyJitter);
  const double f0 = spec.base_hz * jitter;

  std::array<double, sd::kHarmonics> phase{};
  for (auto& p : phase) p = rng.uniform(0.0, 2.0 * sd::kPi);

  std::array<double, sd::kHarmonics> phase_upper{};
  std::array<double, sd::kHarmonics> phase_lower{};
  if (label.kind == ClassKind::GearFault) {
    for (auto& p : phase_upper) p = rng.uniform(0.0, 2.0 * sd::kPi);
    for (auto& p : phase_lower) p = rng.uniform(0.0, 2.0 * sd::kPi);
  }

  double mod_depth = 0.0;
  double mod_phase = 0.0;
  double noise_std = spec.noise_std;
  bool tonal = true;
  switch (label.kind) {
    case ClassKind::Healthy:
    case ClassKind::GearFault:
      break;
    case ClassKind::FiveBladesFault:
      mod_depth = sd::kFiveBladesModDepth;
      mod_phase = rng.uniform(0.0, 2.0 * sd::kPi);
      noise_std *= sd::kFiveBladesNoiseMult;
      break;
    case ClassKind::TenBladesFault:
      mod_depth = sd::kTenBladesModDepth;
      mod_phase = rng.uniform(0.0, 2.0 * sd::kPi);
      noise_std *= sd::kTenBladesNoiseMult;
      break;
    case ClassKind::ShiftedBrushFault:
      tonal = false;
      noise_std = sd::kBrushRmsFactor * sd::healthy_rms(spec.noise_std);
      break;
  }
  const double mod_hz = f0 / 5.0;

  AudioClip clip;
  clip.sample_rate_hz = spec.sample_rate_hz;
  clip.label = label;
  const auto n = static_cast<std::size_t>(std::llround(spec.duration_s * spec.sample_rate_hz));
  clip.samples.resize(n);

  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / spec.sample_rate_hz;
    double s = 0.0;
    if (tonal) {
      for (int k = 1; k <= sd::kHarmonics; ++k) {
        const double a = sd::harmonic_amplitude(k);
        const double w = 2.0 * sd::kPi * (k * f0);
        s += a * std::sin(w * t + phase[k - 1]);
        if (label.kind == ClassKind::GearFault) {
          const double a_side = sd::kSidebandRelAmplitude * a;
          const double w_up = 2.0 * sd::kPi * (k * f0 + sd::kSidebandOffsetHz);
          const double w_dn = 2.0 * sd::kPi * (k * f0 - sd::kSidebandOffsetHz);
          s += a_side * std::sin(w_up * t + phase_upper[k - 1]);
          s += a_side * std::sin(w_dn * t + phase_lower[k - 1]);
        }
      }
      if (mod_depth > 0.0) {
        s *= 1.0 + mod_depth * std::sin(2.0 * sd::kPi * mod_hz * t + mod_phase);
      }
    }
    s += rng.normal(0.0, noise_std);
    clip.samples[i] = std::clamp(s, -1.0, 1.0);
  }
  return clip;
}

// clips_per_class clips for every class, unless overridden per class.
inline LabeledDataset gen_dataset(
    const SynthSpec& spec,
    const std::optional<std::map<ClassKind, int>>& class_counts = std::nullopt) {
  LabeledDataset dataset;
  dataset.provenance = "synthetic seed=" + std::to_string(spec.seed);
  std::size_t total = 0;
  for (ClassKind kind : kAllClassKinds) {
    int count = spec.clips_per_class;
    if (class_counts) {
      const auto it = class_counts->find(kind);
      if (it != class_counts->end()) count = it->second;
    }
    if (count < 0) throw std::invalid_argument("negative class count");
    total += static_cast<std::size_t>(count);
    for (int i = 0; i < count; ++i) {
      dataset.clips.push_back(gen_clip(spec, ClassLabel{kind}, i));
    }
  }
  if (total == 0) throw EmptyDataset("all class counts are zero");
  return dataset;
}

// Writes 16-bit PCM WAVs named class_<label>_<index>.wav plus a manifest in
// the audio_ingest format. Returns the manifest path.
inline std::filesystem::path write_dataset(const LabeledDataset& dataset,
                                           const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoFailure("cannot create " + root.string());

  const fs::path manifest_path = root / "manifest.csv";
  std::ofstream manifest(manifest_path);
  if (!manifest) throw IoFailure("cannot write " + manifest_path.string());

  std::map<ClassKind, int> next_index;
  for (const auto& clip : dataset.clips) {
    if (!clip.label) throw EmptyDataset("dataset clip without a label");
    const int idx = next_index[clip.label->kind]++;
    const std::string name = "class_" + std::string(to_string(clip.label->kind)) + "_" +
                             std::to_string(idx) + ".wav";
    write_wav16(root / name, clip);
    manifest << name << ',' << to_string(clip.label->kind) << '\n';
  }
  if (!manifest) throw IoFailure("manifest write failed");
  return manifest_path;
}

}  // namespace motordiag
