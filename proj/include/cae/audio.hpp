#pragma once

// Voice front end: endpointing, 64-band log mel spectrogram, per-recording
// normalization, and 16-bit PCM WAV I/O.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>
#include <vector>

#include "cae/tensor.hpp"
#include "cae/types.hpp"

namespace cae {

inline constexpr int kCanonicalSampleRate = 16000;

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kCanonicalSampleRate;

  void validate() const {
    if (samples.empty()) throw InvalidInput("empty waveform");
    if (sample_rate <= 0) throw InvalidInput("sample rate must be positive");
    for (double s : samples)
      if (!std::isfinite(s)) throw InvalidInput("non-finite waveform sample");
  }

  double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

// 64 x T log mel energies, bands by frames.
struct MelSpectrogram {
  Tensor<double> values;
  double window = 0.025;
  double frame_shift = 0.010;

  std::size_t bands() const { return values.dim(0); }
  std::size_t frames() const { return values.dim(1); }
};

struct FrontendOptions {
  double window = 0.025;
  double frame_shift = 0.010;
  double log_floor = 1e-10;
  double endpoint_fraction = 0.1;
};

struct FrameLayout {
  std::size_t window = 0;
  std::size_t shift = 0;

  static FrameLayout at(int sample_rate, const FrontendOptions& opt = {}) {
    return {static_cast<std::size_t>(std::lround(opt.window * sample_rate)),
            static_cast<std::size_t>(std::lround(opt.frame_shift * sample_rate))};
  }

  // 1 + floor((len - window) / shift), zero when shorter than one window.
  std::size_t frame_count(std::size_t length) const { return length < window ? 0 : 1 + (length - window) / shift; }
};

inline std::vector<double> frame_energies(const Waveform& w, const FrameLayout& layout) {
  const std::size_t frames = layout.frame_count(w.samples.size());
  std::vector<double> energy(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double e = 0.0;
    for (std::size_t i = 0; i < layout.window; ++i) {
      const double s = w.samples[f * layout.shift + i];
      e += s * s;
    }
    energy[f] = e;
  }
  return energy;
}

// Trims leading/trailing low-energy frames. A frame is active when its
// short-time energy exceeds `energy_fraction` times the mean frame energy; the
// result spans the first to the last active frame. Signals with no active
// frame (or shorter than one window) are returned unchanged.
inline Waveform endpoint(const Waveform& w, double energy_fraction = 0.1, const FrontendOptions& opt = {}) {
  w.validate();
  if (!(energy_fraction >= 0.0)) throw InvalidInput("energy fraction must be non-negative");
  const auto layout = FrameLayout::at(w.sample_rate, opt);
  const auto energy = frame_energies(w, layout);
  if (energy.empty()) return w;
  double mean = 0.0;
  for (double e : energy) mean += e;
  mean /= static_cast<double>(energy.size());
  const double threshold = energy_fraction * mean;

  std::size_t first = energy.size(), last = 0;
  for (std::size_t f = 0; f < energy.size(); ++f)
    if (energy[f] > threshold) {
      first = std::min(first, f);
      last = f;
    }
  if (first == energy.size()) return w;
  const std::size_t begin = first * layout.shift;
  const std::size_t end = std::min(w.samples.size(), last * layout.shift + layout.window);
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.assign(w.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                     w.samples.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filters equally spaced on the HTK mel scale from 0 Hz to Nyquist,
// evaluated at the bins of an `fft_size`-point real FFT. Row-major [bands x bins].
inline std::vector<double> mel_filterbank(std::size_t bands, std::size_t fft_size, int sample_rate) {
  const std::size_t bins = fft_size / 2 + 1;
  const double top = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(bands + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) edges[i] = mel_to_hz(top * static_cast<double>(i) / (bands + 1));
  std::vector<double> fb(bands * bins, 0.0);
  for (std::size_t b = 0; b < bands; ++b) {
    const double lo = edges[b], mid = edges[b + 1], hi = edges[b + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(fft_size);
      double v = 0.0;
      if (f > lo && f <= mid) v = (f - lo) / (mid - lo);
      else if (f > mid && f < hi) v = (hi - f) / (hi - mid);
      fb[b * bins + k] = v;
    }
  }
  return fb;
}

namespace detail {

struct FftwBuffer {
  double* real = nullptr;
  fftw_complex* spectrum = nullptr;
  explicit FftwBuffer(std::size_t n)
      : real(fftw_alloc_real(n)), spectrum(fftw_alloc_complex(n / 2 + 1)) {}
  ~FftwBuffer() {
    fftw_free(real);
    fftw_free(spectrum);
  }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
};

// FFTW planning is not thread-safe; executing an existing plan on fresh
// arrays is. Plans are created once per size under a lock.
inline fftw_plan r2c_plan(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, fftw_plan> plans;
  std::lock_guard lock(mu);
  auto it = plans.find(n);
  if (it != plans.end()) return it->second;
  FftwBuffer scratch(n);
  fftw_plan p = fftw_plan_dft_r2c_1d(static_cast<int>(n), scratch.real, scratch.spectrum, FFTW_ESTIMATE);
  plans.emplace(n, p);
  return p;
}

}  // namespace detail

// Natural log of (mel energy + floor) on Hamming-windowed power spectra.
inline MelSpectrogram log_mel(const Waveform& w, const FrontendOptions& opt = {}) {
  w.validate();
  const auto layout = FrameLayout::at(w.sample_rate, opt);
  const std::size_t frames = layout.frame_count(w.samples.size());
  if (frames == 0)
    throw InvalidInput("waveform of " + std::to_string(w.samples.size()) + " samples is shorter than one " +
                       std::to_string(layout.window) + "-sample analysis window");
  std::size_t fft_size = 1;
  while (fft_size < layout.window) fft_size <<= 1;
  const std::size_t bins = fft_size / 2 + 1;
  const auto fb = mel_filterbank(kMelBands, fft_size, w.sample_rate);

  std::vector<double> hamming(layout.window);
  for (std::size_t i = 0; i < layout.window; ++i)
    hamming[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / static_cast<double>(layout.window - 1));

  MelSpectrogram mel{Tensor<double>(Shape{kMelBands, frames}), opt.window, opt.frame_shift};
  fftw_plan plan = detail::r2c_plan(fft_size);
  detail::FftwBuffer buf(fft_size);
  std::vector<double> power(bins);
  for (std::size_t f = 0; f < frames; ++f) {
    std::fill(buf.real, buf.real + fft_size, 0.0);
    for (std::size_t i = 0; i < layout.window; ++i) buf.real[i] = w.samples[f * layout.shift + i] * hamming[i];
    fftw_execute_dft_r2c(plan, buf.real, buf.spectrum);
    for (std::size_t k = 0; k < bins; ++k)
      power[k] = buf.spectrum[k][0] * buf.spectrum[k][0] + buf.spectrum[k][1] * buf.spectrum[k][1];
    for (std::size_t b = 0; b < kMelBands; ++b) {
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += fb[b * bins + k] * power[k];
      mel.values[b * frames + f] = std::log(e + opt.log_floor);
    }
  }
  return mel;
}

// Zero-mean, unit-variance per band over the recording.
inline MelSpectrogram normalize(const MelSpectrogram& m) {
  MelSpectrogram out = m;
  const std::size_t frames = m.frames();
  for (std::size_t b = 0; b < m.bands(); ++b) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t t = 0; t < frames; ++t) mean += m.values[b * frames + t];
    mean /= static_cast<double>(frames);
    for (std::size_t t = 0; t < frames; ++t) {
      const double d = m.values[b * frames + t] - mean;
      sq += d * d;
    }
    const double inv = 1.0 / std::sqrt(sq / static_cast<double>(frames) + 1e-8);
    for (std::size_t t = 0; t < frames; ++t) out.values[b * frames + t] = (m.values[b * frames + t] - mean) * inv;
  }
  return out;
}

// Linear-interpolation resampler.
inline Waveform resample(const Waveform& w, int target_rate) {
  w.validate();
  if (target_rate <= 0) throw InvalidInput("target sample rate must be positive");
  if (target_rate == w.sample_rate) return w;
  const double ratio = static_cast<double>(w.sample_rate) / target_rate;
  const auto n = static_cast<std::size_t>(std::floor((w.samples.size() - 1) / ratio)) + 1;
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = i * ratio;
    const auto j = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(j);
    const double a = w.samples[j];
    const double b = j + 1 < w.samples.size() ? w.samples[j + 1] : a;
    out.samples[i] = a + frac * (b - a);
  }
  return out;
}

// Endpoint, log mel, normalize. Falls back to the raw recording when the
// endpointed segment is shorter than one analysis window.
inline MelSpectrogram voice_features(const Waveform& w, const FrontendOptions& opt = {}) {
  Waveform trimmed = endpoint(w, opt.endpoint_fraction, opt);
  if (FrameLayout::at(trimmed.sample_rate, opt).frame_count(trimmed.samples.size()) == 0) trimmed = w;
  return normalize(log_mel(trimmed, opt));
}

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}
inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}
inline void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

}  // namespace detail

// Reads 16-bit PCM WAV; multi-channel input is averaged to mono.
inline Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open audio file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw DataError(path.string() + ": not a RIFF/WAVE file");
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::size_t len = detail::read_u32(chunk + 4);
    if (pos + 8 + len > bytes.size()) throw DataError(path.string() + ": truncated chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0 && len >= 16) {
      format = detail::read_u16(chunk + 8);
      channels = detail::read_u16(chunk + 10);
      rate = detail::read_u32(chunk + 12);
      bits = detail::read_u16(chunk + 22);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_len = len;
    }
    pos += 8 + len + (len & 1);
  }
  if (format != 1 || bits != 16 || channels == 0)
    throw DataError(path.string() + ": only 16-bit PCM WAV is supported");
  if (!data) throw DataError(path.string() + ": missing data chunk");
  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  const std::size_t frames = data_len / (2u * channels);
  w.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c)
      acc += static_cast<std::int16_t>(detail::read_u16(data + 2 * (i * channels + c))) / 32768.0;
    w.samples[i] = acc / channels;
  }
  if (w.samples.empty()) throw DataError(path.string() + ": no audio samples");
  return w;
}

// Writes mono 16-bit PCM; samples are clipped to [-1, 1).
inline void write_wav(const std::filesystem::path& path, const Waveform& w) {
  std::string out = "RIFF";
  const auto data_len = static_cast<std::uint32_t>(2 * w.samples.size());
  detail::put_u32(out, 36 + data_len);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);
  detail::put_u16(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  out += "data";
  detail::put_u32(out, data_len);
  for (double s : w.samples) {
    const long q = std::lround(std::clamp(s, -1.0, 1.0) * 32768.0);
    detail::put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L))));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write audio file " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

// Reads a recording and resamples it to `sample_rate`.
inline Waveform load_voice(const std::filesystem::path& path, int sample_rate = kCanonicalSampleRate) {
  return resample(read_wav(path), sample_rate);
}

}  // namespace cae
