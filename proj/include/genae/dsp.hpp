#pragma once

// Signal-processing primitives shared by the model, the losses and the metrics.

#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "genae/errors.hpp"
#include "genae/fft.hpp"
#include "genae/tensor.hpp"

namespace genae {

inline constexpr int kSampleRate = 44100;
inline constexpr double kLogFloor = 1e-5;

struct AudioBuffer {
  int sample_rate = kSampleRate;
  std::vector<std::vector<float>> channels;

  std::size_t num_channels() const { return channels.size(); }
  std::size_t length() const { return channels.empty() ? 0 : channels[0].size(); }
  double seconds() const { return static_cast<double>(length()) / sample_rate; }

  void validate() const {
    if (channels.empty()) throw FormatError("audio buffer has no channels");
    for (const auto& c : channels)
      if (c.size() != channels[0].size()) throw FormatError("audio channels have unequal lengths");
  }
};

// ---------------------------------------------------------------------------
// STFT

inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

struct StftConfig {
  std::size_t window_size = 1024;
  std::size_t hop = 256;
  std::vector<double> window;

  StftConfig() = default;
  StftConfig(std::size_t win, std::size_t hop_) : window_size(win), hop(hop_), window(hann_window(win)) { validate(); }

  std::size_t bins() const { return window_size / 2 + 1; }
  void validate() const {
    if (hop == 0 || hop > window_size) throw ConfigError("stft: need 0 < hop <= window");
    if (window.size() != window_size) throw ConfigError("stft: window length != window size");
  }
  std::size_t frames(std::size_t length) const {
    if (length < window_size) return 0;
    return 1 + (length - window_size) / hop;
  }
};

// Complex spectrogram, frames x bins, no center padding.
struct Spectrogram {
  std::size_t frames = 0, bins = 0;
  std::vector<std::complex<double>> values;
  std::complex<double> at(std::size_t f, std::size_t k) const { return values[f * bins + k]; }
};

template <class Sample>
Spectrogram stft(std::span<const Sample> x, const StftConfig& cfg) {
  cfg.validate();
  if (x.size() < cfg.window_size)
    throw std::invalid_argument("stft: signal of " + std::to_string(x.size()) + " samples shorter than window " +
                                std::to_string(cfg.window_size));
  Spectrogram s;
  s.frames = cfg.frames(x.size());
  s.bins = cfg.bins();
  s.values.resize(s.frames * s.bins);
  std::vector<fft::cplx> buf(cfg.window_size);
  for (std::size_t f = 0; f < s.frames; ++f) {
    const std::size_t off = f * cfg.hop;
    for (std::size_t n = 0; n < cfg.window_size; ++n) buf[n] = fft::cplx(cfg.window[n] * x[off + n], 0.0);
    fft::transform(buf);
    std::copy_n(buf.begin(), s.bins, s.values.begin() + static_cast<std::ptrdiff_t>(f * s.bins));
  }
  return s;
}

// Differentiable |STFT(x)|: x is [L] (or [1, L]); output [frames, bins].
template <class T>
Tensor<T> stft_magnitude(const Tensor<T>& x, const StftConfig& cfg) {
  const std::size_t len = x.numel();
  auto spec = stft(std::span<const T>(x.data().data(), len), cfg);
  std::vector<T> mag(spec.frames * spec.bins);
  for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = static_cast<T>(std::abs(spec.values[i]));
  const bool keep = grad_enabled() && x.requires_grad();
  auto saved = keep ? std::make_shared<Spectrogram>(std::move(spec)) : nullptr;
  return make_op<T>(Shape{saved ? saved->frames : cfg.frames(len), cfg.bins()}, std::move(mag), {x}, "stft_magnitude",
                    [cfg, saved, len](Node<T>& self) {
                      T* gx = parent_grad(self, 0);
                      if (!gx) return;
                      const std::size_t n = cfg.window_size, bins = saved->bins;
                      std::vector<fft::cplx> c(n);
                      for (std::size_t f = 0; f < saved->frames; ++f) {
                        std::fill(c.begin(), c.end(), fft::cplx(0, 0));
                        for (std::size_t k = 0; k < bins; ++k) {
                          const auto X = saved->at(f, k);
                          const double m = std::abs(X);
                          if (m > 1e-20) c[k] = static_cast<double>(self.grad[f * bins + k]) * std::conj(X) / m;
                        }
                        fft::transform(c);
                        const std::size_t off = f * cfg.hop;
                        for (std::size_t i = 0; i < n && off + i < len; ++i)
                          gx[off + i] += static_cast<T>(cfg.window[i] * c[i].real());
                      }
                    },
                    1);
}

// ---------------------------------------------------------------------------
// Mel filterbank and log-mel spectrogram

struct MelConfig {
  std::size_t n_mels = 192;
  std::size_t window = 1792;
  std::size_t hop = 240;
  int sample_rate = kSampleRate;
  double fmin = 0.0;
  double fmax = kSampleRate / 2.0;

  void validate() const {
    if (n_mels == 0 || hop == 0 || hop > window) throw ConfigError("mel: invalid n_mels/window/hop");
    if (!(fmin >= 0 && fmin < fmax && fmax <= sample_rate / 2.0)) throw ConfigError("mel: invalid frequency range");
  }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filters on the mel scale, weighted by the area of each triangle
// over each FFT bin's frequency interval [f_k - df/2, f_k + df/2] divided by df.
// Every bin inside [fmin, fmax] receives positive weight and no filter is empty
// even where filters are narrower than the bin spacing. Row m sums to
// (f_{m+2} - f_m) / (2 df) when its support lies inside the bin range.
inline std::vector<double> mel_filterbank(const MelConfig& cfg) {
  cfg.validate();
  const std::size_t bins = cfg.window / 2 + 1;
  const double df = static_cast<double>(cfg.sample_rate) / static_cast<double>(cfg.window);
  std::vector<double> edges(cfg.n_mels + 2);
  const double m0 = hz_to_mel(cfg.fmin), m1 = hz_to_mel(cfg.fmax);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(m0 + (m1 - m0) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  // Cumulative area of a unit-height triangle (lo, mid, hi) up to f.
  auto area = [](double lo, double mid, double hi, double f) {
    if (f <= lo) return 0.0;
    if (f <= mid) return 0.5 * (f - lo) * (f - lo) / (mid - lo);
    if (f <= hi) return 0.5 * (mid - lo) + (0.5 * (hi - mid) - 0.5 * (hi - f) * (hi - f) / (hi - mid));
    return 0.5 * (hi - lo);
  };
  std::vector<double> fb(cfg.n_mels * bins, 0.0);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double fc = static_cast<double>(k) * df;
      const double a = area(lo, mid, hi, fc + 0.5 * df) - area(lo, mid, hi, fc - 0.5 * df);
      fb[m * bins + k] = a / df;
    }
  }
  return fb;
}

inline std::vector<double> mel_band_edges(const MelConfig& cfg) {
  std::vector<double> edges(cfg.n_mels + 2);
  const double m0 = hz_to_mel(cfg.fmin), m1 = hz_to_mel(cfg.fmax);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(m0 + (m1 - m0) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  return edges;
}

// Frames produced for a signal of `length` samples: one per hop after
// zero-padding to a hop multiple, so frames line up with a conv stack of the
// same cumulative stride.
inline std::size_t mel_frames(std::size_t length, const MelConfig& cfg) { return (length + cfg.hop - 1) / cfg.hop; }

class MelSpectrogram {
 public:
  explicit MelSpectrogram(MelConfig cfg)
      : cfg_(cfg), stft_(cfg.window, cfg.hop), fb_(mel_filterbank(cfg)), bins_(cfg.window / 2 + 1) {}

  const MelConfig& config() const { return cfg_; }
  const std::vector<double>& filterbank() const { return fb_; }

  // log(eps + mel-weighted magnitude), [frames, n_mels].
  template <class T = float, class Sample>
  Tensor<T> operator()(std::span<const Sample> x) const {
    if (x.empty()) throw std::invalid_argument("mel_spectrogram: empty signal");
    const std::size_t frames = mel_frames(x.size(), cfg_);
    const std::size_t extra = cfg_.window - cfg_.hop;
    const std::size_t left = extra / 2;
    std::vector<double> padded(frames * cfg_.hop + extra, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) padded[left + i] = static_cast<double>(x[i]);
    auto spec = stft(std::span<const double>(padded), stft_);
    std::vector<T> out(frames * cfg_.n_mels);
    std::vector<double> mag(bins_);
    for (std::size_t f = 0; f < frames; ++f) {
      for (std::size_t k = 0; k < bins_; ++k) mag[k] = std::abs(spec.at(f, k));
      for (std::size_t m = 0; m < cfg_.n_mels; ++m) {
        double e = 0;
        const double* row = fb_.data() + m * bins_;
        for (std::size_t k = 0; k < bins_; ++k) e += row[k] * mag[k];
        out[f * cfg_.n_mels + m] = static_cast<T>(std::log(kLogFloor + e));
      }
    }
    return Tensor<T>(Shape{frames, cfg_.n_mels}, std::move(out));
  }

 private:
  MelConfig cfg_;
  StftConfig stft_;
  std::vector<double> fb_;
  std::size_t bins_;
};

template <class T = float, class Sample>
Tensor<T> mel_spectrogram(std::span<const Sample> x, const MelConfig& cfg) {
  return MelSpectrogram(cfg).template operator()<T>(x);
}

// ---------------------------------------------------------------------------
// Channel formats

// m = (l + r) / 2, s = (l - r) / 2, evaluated in double and rounded once.
inline void lr_to_ms(std::span<const float> l, std::span<const float> r, std::vector<float>& m, std::vector<float>& s) {
  if (l.size() != r.size()) throw std::invalid_argument("lr_to_ms: channel length mismatch");
  m.resize(l.size());
  s.resize(l.size());
  for (std::size_t i = 0; i < l.size(); ++i) {
    m[i] = static_cast<float>((static_cast<double>(l[i]) + r[i]) * 0.5);
    s[i] = static_cast<float>((static_cast<double>(l[i]) - r[i]) * 0.5);
  }
}

inline void ms_to_lr(std::span<const float> m, std::span<const float> s, std::vector<float>& l, std::vector<float>& r) {
  if (m.size() != s.size()) throw std::invalid_argument("ms_to_lr: channel length mismatch");
  l.resize(m.size());
  r.resize(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    l[i] = static_cast<float>(static_cast<double>(m[i]) + s[i]);
    r[i] = static_cast<float>(static_cast<double>(m[i]) - s[i]);
  }
}

// ---------------------------------------------------------------------------
// Coprime STFT resolutions

// Validates that the window sizes are pairwise coprime (at least three) and
// returns STFT configs with hop = window / 4.
inline std::vector<StftConfig> coprime_windows(const std::vector<std::size_t>& sizes) {
  if (sizes.size() < 3)
    throw ConfigError("coprime_windows: need at least 3 window sizes, got " + std::to_string(sizes.size()));
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < 4) throw ConfigError("coprime_windows: window " + std::to_string(sizes[i]) + " too small");
    for (std::size_t j = i + 1; j < sizes.size(); ++j) {
      const auto g = std::gcd(sizes[i], sizes[j]);
      if (g != 1)
        throw ConfigError("coprime_windows: windows " + std::to_string(sizes[i]) + " and " + std::to_string(sizes[j]) +
                          " share factor " + std::to_string(g));
    }
  }
  std::vector<StftConfig> out;
  for (auto w : sizes) out.emplace_back(w, w / 4);
  return out;
}

inline bool pairwise_coprime(const std::vector<std::size_t>& sizes) {
  for (std::size_t i = 0; i < sizes.size(); ++i)
    for (std::size_t j = i + 1; j < sizes.size(); ++j)
      if (std::gcd(sizes[i], sizes[j]) != 1) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Level augmentation

inline constexpr double kLevelAugMinDb = -12.0;
inline constexpr double kLevelAugMaxDb = 0.0;

// One gain for every channel of the example.
inline AudioBuffer level_augment(const AudioBuffer& x, double gain_db) {
  AudioBuffer y = x;
  const double g = std::pow(10.0, gain_db / 20.0);
  for (auto& c : y.channels)
    for (auto& v : c) v = static_cast<float>(v * g);
  return y;
}

template <class Rng>
double draw_level_gain_db(Rng& rng) {
  std::uniform_real_distribution<double> u(kLevelAugMinDb, kLevelAugMaxDb);
  return u(rng);
}

}  // namespace genae
