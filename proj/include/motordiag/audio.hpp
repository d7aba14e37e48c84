#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "motordiag/error.hpp"

namespace motordiag {

enum class ClassKind {
  Healthy,
  GearFault,
  FiveBladesFault,
  TenBladesFault,
  ShiftedBrushFault,
};

inline constexpr std::array<ClassKind, 5> kAllClassKinds = {
    ClassKind::Healthy,          ClassKind::GearFault,
    ClassKind::FiveBladesFault,  ClassKind::TenBladesFault,
    ClassKind::ShiftedBrushFault,
};

struct ClassLabel {
  ClassKind kind = ClassKind::Healthy;

  // 0 for a healthy device, 1 for any fault.
  int binary() const { return kind == ClassKind::Healthy ? 0 : 1; }

  friend bool operator==(const ClassLabel&, const ClassLabel&) = default;
};

inline std::string_view to_string(ClassKind kind) {
  switch (kind) {
    case ClassKind::Healthy: return "healthy";
    case ClassKind::GearFault: return "fault1";
    case ClassKind::FiveBladesFault: return "fault2";
    case ClassKind::TenBladesFault: return "fault3";
    case ClassKind::ShiftedBrushFault: return "fault4";
  }
  return "healthy";
}

inline std::optional<ClassKind> parse_class_kind(std::string_view s) {
  for (ClassKind k : kAllClassKinds) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

// A mono waveform at a fixed sample rate. Samples always lie in [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  std::uint32_t sample_rate_hz = 0;
  std::optional<ClassLabel> label;

  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate_hz;
  }
};

struct LabeledDataset {
  std::vector<AudioClip> clips;  // every clip labeled, all rates equal
  std::string provenance;
};

namespace detail {

inline std::uint32_t read_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16le(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void write_u32le(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

inline void write_u16le(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
}

// Decodes one PCM sample starting at p to [-1, 1]. 8-bit is unsigned,
// wider widths are signed little-endian; the divisor is the type's
// magnitude (128, 32768, 8388608, 2147483648).
inline double decode_pcm_sample(const unsigned char* p, int bits) {
  switch (bits) {
    case 8:
      return (static_cast<int>(p[0]) - 128) / 128.0;
    case 16: {
      const auto v = static_cast<std::int16_t>(read_u16le(p));
      return v / 32768.0;
    }
    case 24: {
      std::int32_t v = p[0] | (p[1] << 8) | (p[2] << 16);
      if (v & 0x800000) v |= ~0xffffff;  // sign extend
      return v / 8388608.0;
    }
    case 32: {
      const auto v = static_cast<std::int32_t>(read_u32le(p));
      return v / 2147483648.0;
    }
    default:
      throw UnsupportedEncoding("unsupported bit depth");
  }
}

}  // namespace detail

// Reads a RIFF/WAVE file holding integer PCM (8/16/24/32-bit, any channel
// count). Multi-channel audio is averaged to mono.
inline AudioClip load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path.string());
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>()};

  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw MalformedHeader("not a RIFF/WAVE file: " + path.string());
  }

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
    const std::uint32_t chunk_len = detail::read_u32le(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (body + chunk_len > bytes.size()) {
      throw MalformedHeader("truncated chunk in " + path.string());
    }
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (chunk_len < 16) throw MalformedHeader("short fmt chunk");
      format = detail::read_u16le(bytes.data() + body);
      channels = detail::read_u16le(bytes.data() + body + 2);
      rate = detail::read_u32le(bytes.data() + body + 4);
      bits = detail::read_u16le(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = chunk_len;
    }
    pos = body + chunk_len + (chunk_len & 1);  // chunks are word aligned
  }

  if (!have_fmt || data == nullptr) {
    throw MalformedHeader("missing fmt/data chunk in " + path.string());
  }
  if (format != 1) {
    throw UnsupportedEncoding("non-PCM encoding in " + path.string());
  }
  if (bits != 8 && bits != 16 && bits != 24 && bits != 32) {
    throw UnsupportedEncoding("bit depth " + std::to_string(bits) + " in " +
                              path.string());
  }
  if (channels == 0 || rate == 0) {
    throw MalformedHeader("bad fmt fields in " + path.string());
  }

  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t frame_size = bytes_per_sample * channels;
  const std::size_t frames = data_len / frame_size;
  if (frames == 0) throw EmptyAudio("no samples in " + path.string());

  AudioClip clip;
  clip.sample_rate_hz = rate;
  clip.samples.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::uint16_t c = 0; c < channels; ++c) {
      acc += detail::decode_pcm_sample(data + f * frame_size + c * bytes_per_sample,
                                       bits);
    }
    clip.samples[f] = acc / channels;
  }
  return clip;
}

// Writes a clip as mono 16-bit PCM. Samples are clipped to [-1, 1] and
// quantized with round(s * 32768), clamped to the int16 range, so a
// round-trip error never exceeds half a quantization step plus clipping loss.
inline void write_wav16(const std::filesystem::path& path, const AudioClip& clip) {
  std::vector<unsigned char> out;
  out.reserve(44 + 2 * clip.samples.size());
  const std::uint32_t data_len = static_cast<std::uint32_t>(2 * clip.samples.size());

  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  detail::write_u32le(out, 36 + data_len);
  out.insert(out.end(), {'W', 'A', 'V', 'E'});
  out.insert(out.end(), {'f', 'm', 't', ' '});
  detail::write_u32le(out, 16);
  detail::write_u16le(out, 1);  // PCM
  detail::write_u16le(out, 1);  // mono
  detail::write_u32le(out, clip.sample_rate_hz);
  detail::write_u32le(out, clip.sample_rate_hz * 2);
  detail::write_u16le(out, 2);
  detail::write_u16le(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  detail::write_u32le(out, data_len);

  for (double s : clip.samples) {
    const double clipped = std::clamp(s, -1.0, 1.0);
    const long q = std::lround(clipped * 32768.0);
    const auto v = static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L));
    detail::write_u16le(out, static_cast<std::uint16_t>(v));
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot open for write: " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) throw IoFailure("write failed: " + path.string());
}

// Cuts a clip into consecutive non-overlapping windows of
// round(window_seconds * rate) samples. A trailing remainder shorter than
// one window is discarded. Labels are copied from the parent.
inline std::vector<AudioClip> segment(const AudioClip& clip,
                                      double window_seconds = 1.0) {
  const auto window_len =
      static_cast<std::size_t>(std::llround(window_seconds * clip.sample_rate_hz));
  if (window_len < 2) {
    throw WindowTooShort("window of " + std::to_string(window_len) +
                         " samples; need at least 2");
  }
  const std::size_t count = clip.samples.size() / window_len;
  std::vector<AudioClip> windows;
  windows.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    AudioClip piece;
    piece.sample_rate_hz = clip.sample_rate_hz;
    piece.label = clip.label;
    piece.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(w * window_len),
                         clip.samples.begin() + static_cast<std::ptrdiff_t>((w + 1) * window_len));
    windows.push_back(std::move(piece));
  }
  return windows;
}

// Linear-interpolation resampling to a target rate.
inline AudioClip resample_linear(const AudioClip& clip, std::uint32_t target_rate) {
  if (clip.sample_rate_hz == target_rate) return clip;
  AudioClip out;
  out.sample_rate_hz = target_rate;
  out.label = clip.label;
  const std::size_t n_in = clip.samples.size();
  if (n_in == 1) {
    out.samples = clip.samples;
    return out;
  }
  const double step = static_cast<double>(clip.sample_rate_hz) / target_rate;
  const auto n_out = static_cast<std::size_t>(
      std::floor(static_cast<double>(n_in - 1) / step)) + 1;
  out.samples.resize(n_out);
  for (std::size_t k = 0; k < n_out; ++k) {
    const double p = static_cast<double>(k) * step;
    const auto i = static_cast<std::size_t>(p);
    const double frac = p - static_cast<double>(i);
    const double a = clip.samples[i];
    const double b = clip.samples[std::min(i + 1, n_in - 1)];
    out.samples[k] = a + frac * (b - a);
  }
  return out;
}

// Manifest format: one `relative/path,label` per line; labels are
// healthy|fault1|fault2|fault3|fault4. Blank lines and lines starting
// with '#' are skipped.
inline std::vector<std::pair<std::string, ClassLabel>> parse_manifest(
    const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoFailure("cannot open manifest " + manifest_path.string());

  std::vector<std::pair<std::string, ClassLabel>> entries;
  std::map<std::string, ClassKind> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) {
      throw IoFailure("manifest line " + std::to_string(line_no) + ": missing label");
    }
    const std::string rel = line.substr(0, comma);
    const std::string label_str = line.substr(comma + 1);
    const auto kind = parse_class_kind(label_str);
    if (!kind) {
      throw IoFailure("manifest line " + std::to_string(line_no) +
                      ": unknown label '" + label_str + "'");
    }
    if (seen.count(rel)) {
      throw AmbiguousLabel("file matched by two manifest rules: " + rel);
    }
    seen.emplace(rel, *kind);
    entries.emplace_back(rel, ClassLabel{*kind});
  }
  return entries;
}

// Loads every WAV under `root`, labels it, resamples stragglers to the
// dataset majority rate, and segments into fixed windows. Labels come from
// the manifest when given, otherwise from per-class subdirectory names.
inline LabeledDataset load_dataset(
    const std::filesystem::path& root,
    const std::optional<std::filesystem::path>& manifest = std::nullopt,
    double window_seconds = 1.0) {
  namespace fs = std::filesystem;

  std::vector<std::pair<fs::path, ClassLabel>> files;
  if (manifest) {
    for (const auto& [rel, label] : parse_manifest(*manifest)) {
      files.emplace_back(root / rel, label);
    }
  } else {
    for (ClassKind k : kAllClassKinds) {
      const fs::path dir = root / std::string(to_string(k));
      if (!fs::exists(dir)) continue;
      std::vector<fs::path> names;
      for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".wav") {
          names.push_back(entry.path());
        }
      }
      std::sort(names.begin(), names.end());
      for (auto& p : names) files.emplace_back(std::move(p), ClassLabel{k});
    }
  }
  if (files.empty()) {
    throw EmptyDataset("no labeled audio found under " + root.string());
  }

  std::vector<AudioClip> raw;
  raw.reserve(files.size());
  for (const auto& [path, label] : files) {
    AudioClip clip = load_wav(path);
    clip.label = label;
    raw.push_back(std::move(clip));
  }

  // Majority sample rate; ties go to the higher rate.
  std::map<std::uint32_t, std::size_t> rate_counts;
  for (const auto& c : raw) ++rate_counts[c.sample_rate_hz];
  std::uint32_t majority = raw.front().sample_rate_hz;
  std::size_t best = 0;
  for (const auto& [rate, count] : rate_counts) {
    if (count > best || (count == best && rate > majority)) {
      majority = rate;
      best = count;
    }
  }

  LabeledDataset dataset;
  dataset.provenance = root.string();
  for (auto& clip : raw) {
    AudioClip at_rate =
        clip.sample_rate_hz == majority ? std::move(clip) : resample_linear(clip, majority);
    for (auto& window : segment(at_rate, window_seconds)) {
      dataset.clips.push_back(std::move(window));
    }
  }
  if (dataset.clips.empty()) {
    throw EmptyDataset("all inputs shorter than one window under " + root.string());
  }
  return dataset;
}

}  // namespace motordiag
