#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "scorediff/core/error.hpp"
#include "scorediff/core/io.hpp"

namespace scorediff {

/// Every analysis in the pipeline runs at this rate; loaders resample.
inline constexpr int kPipelineRate = 16000;

/// Mono audio with amplitudes nominally in [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = kPipelineRate;

  double duration() const { return double(samples.size()) / double(sample_rate); }

  void validate() const {
    detail::require(sample_rate > 0, "sample rate must be positive");
    for (double s : samples)
      if (!std::isfinite(s)) throw ParameterError("audio clip contains non-finite samples");
  }
};

/// Band-limited resampling with a Hann-windowed sinc kernel.
inline AudioClip resample(const AudioClip& in, int target_rate, int half_width = 16) {
  in.validate();
  detail::require(target_rate > 0, "target rate must be positive");
  if (in.sample_rate == target_rate || in.samples.empty()) {
    AudioClip out = in;
    out.sample_rate = target_rate;
    return out;
  }
  const double ratio = double(target_rate) / double(in.sample_rate);
  const double cutoff = std::min(1.0, ratio);  // relative to input Nyquist
  const auto n_out = static_cast<std::size_t>(std::floor(double(in.samples.size()) * ratio));
  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(n_out);
  const double support = double(half_width) / cutoff;
  const auto n_in = static_cast<std::ptrdiff_t>(in.samples.size());
  for (std::size_t i = 0; i < n_out; ++i) {
    const double center = double(i) / ratio;
    const auto lo = std::max<std::ptrdiff_t>(0, std::ptrdiff_t(std::ceil(center - support)));
    const auto hi = std::min<std::ptrdiff_t>(n_in - 1, std::ptrdiff_t(std::floor(center + support)));
    double acc = 0;
    for (std::ptrdiff_t j = lo; j <= hi; ++j) {
      const double x = (double(j) - center) * cutoff;
      const double sinc = x == 0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
      const double win = 0.5 + 0.5 * std::cos(std::numbers::pi * x / double(half_width));
      acc += in.samples[std::size_t(j)] * sinc * win * cutoff;
    }
    out.samples[i] = acc;
  }
  return out;
}

namespace detail {

template <class T>
T read_le(const unsigned char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

}  // namespace detail

/// Reads a RIFF/WAVE file holding 16-bit PCM, 24-bit PCM, 32-bit PCM or
/// 32-bit float samples. Channels are averaged to mono. When `target_rate`
/// is positive the result is resampled to it.
inline AudioClip read_wav(const std::filesystem::path& path, int target_rate = kPipelineRate) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open wav file " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)), {});
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) || std::memcmp(buf.data() + 8, "WAVE", 4))
    throw FormatError(path.string() + ": not a RIFF/WAVE file");
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* pcm = nullptr;
  std::size_t pcm_bytes = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const std::uint32_t len = detail::read_le<std::uint32_t>(buf.data() + pos + 4);
    const unsigned char* body = buf.data() + pos + 8;
    if (pos + 8 + len > buf.size()) throw FormatError(path.string() + ": truncated chunk");
    if (!std::memcmp(buf.data() + pos, "fmt ", 4)) {
      if (len < 16) throw FormatError(path.string() + ": short fmt chunk");
      format = detail::read_le<std::uint16_t>(body);
      channels = detail::read_le<std::uint16_t>(body + 2);
      rate = detail::read_le<std::uint32_t>(body + 4);
      bits = detail::read_le<std::uint16_t>(body + 14);
      if (format == 0xFFFE && len >= 26) format = detail::read_le<std::uint16_t>(body + 24);
    } else if (!std::memcmp(buf.data() + pos, "data", 4)) {
      pcm = body;
      pcm_bytes = len;
    }
    pos += 8 + len + (len & 1);
  }
  if (!pcm || !channels || !rate) throw FormatError(path.string() + ": missing fmt or data chunk");
  const bool is_float = format == 3 && bits == 32;
  const bool is_pcm = format == 1 && (bits == 16 || bits == 24 || bits == 32);
  if (!is_float && !is_pcm) throw FormatError(path.string() + ": unsupported sample format");
  const std::size_t bytes = bits / 8;
  const std::size_t frames = pcm_bytes / (bytes * channels);
  AudioClip clip;
  clip.sample_rate = int(rate);
  clip.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = pcm + (i * channels + c) * bytes;
      if (is_float) {
        acc += detail::read_le<float>(p);
      } else if (bits == 16) {
        acc += detail::read_le<std::int16_t>(p) / 32768.0;
      } else if (bits == 24) {
        std::int32_t v = p[0] | (p[1] << 8) | (p[2] << 16);
        if (v & 0x800000) v |= ~0xFFFFFF;
        acc += v / 8388608.0;
      } else {
        acc += detail::read_le<std::int32_t>(p) / 2147483648.0;
      }
    }
    clip.samples[i] = acc / channels;
  }
  clip.validate();
  return target_rate > 0 ? resample(clip, target_rate) : clip;
}

/// Writes mono 32-bit float WAV.
inline void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  clip.validate();
  std::string out;
  auto put = [&out](const void* p, std::size_t n) { out.append(static_cast<const char*>(p), n); };
  auto u32 = [&put](std::uint32_t v) { put(&v, 4); };
  auto u16 = [&put](std::uint16_t v) { put(&v, 2); };
  const auto data_bytes = std::uint32_t(clip.samples.size() * 4);
  put("RIFF", 4);
  u32(36 + data_bytes);
  put("WAVEfmt ", 8);
  u32(16);
  u16(3);
  u16(1);
  u32(std::uint32_t(clip.sample_rate));
  u32(std::uint32_t(clip.sample_rate) * 4);
  u16(4);
  u16(32);
  put("data", 4);
  u32(data_bytes);
  for (double s : clip.samples) {
    const float v = static_cast<float>(s);
    if (!std::isfinite(v)) throw NumericError(path.string() + ": sample magnitude exceeds float range");
    put(&v, 4);
  }
  write_file_atomic(path, out);
}

}  // namespace scorediff
