#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "genae/dsp.hpp"
#include "test_util.hpp"

using namespace genae;
using namespace genae::testutil;

namespace {
std::vector<double> sine(std::size_t n, double freq, double amp = 1.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2 * std::numbers::pi * freq * i / kSampleRate);
  return x;
}
std::vector<float> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1, 1);
  std::vector<float> x(n);
  for (auto& v : x) v = u(rng);
  return x;
}
}  // namespace

TEST(Stft, SilenceFrameCount) {
  std::vector<float> x(4096, 0.0f);
  auto s = stft(std::span<const float>(x), StftConfig(1024, 256));
  EXPECT_EQ(s.frames, 13u);
  EXPECT_EQ(s.bins, 513u);
  for (auto v : s.values) EXPECT_EQ(std::abs(v), 0.0);
}

TEST(Stft, FrameCountLaw) {
  StftConfig cfg(1023, 255);
  for (std::size_t len : {1023u, 1024u, 1277u, 1278u, 5000u, 44100u}) {
    std::vector<float> x(len, 0.1f);
    EXPECT_EQ(stft(std::span<const float>(x), cfg).frames, 1 + (len - 1023) / 255) << len;
  }
}

TEST(Stft, ShortSignalRejected) {
  std::vector<float> x(100);
  EXPECT_THROW(stft(std::span<const float>(x), StftConfig(1024, 256)), std::invalid_argument);
}

TEST(Stft, InvalidConfigRejected) {
  EXPECT_THROW(StftConfig(256, 0), ConfigError);
  EXPECT_THROW(StftConfig(256, 512), ConfigError);
}

TEST(Stft, BinCenteredSineConcentratesEnergy) {
  const std::size_t n = 1024, k = 50;
  auto x = sine(4096, static_cast<double>(k) * kSampleRate / n);
  auto s = stft(std::span<const double>(x), StftConfig(n, 256));
  for (std::size_t f = 0; f < s.frames; ++f) {
    double total = 0, near = 0;
    for (std::size_t b = 0; b < s.bins; ++b) {
      const double e = std::norm(s.at(f, b));
      total += e;
      if (b + 1 >= k && b <= k + 1) near += e;
    }
    EXPECT_GE(near / total, 0.9);
  }
}

TEST(Stft, ParsevalAgainstDirectSum) {
  for (std::size_t n : {1024u, 1023u, 511u}) {
    StftConfig cfg(n, n / 4);
    auto x = noise(3 * n, 17);
    auto s = stft(std::span<const float>(x), cfg);
    for (std::size_t f = 0; f < s.frames; ++f) {
      double direct = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const double v = cfg.window[i] * x[f * cfg.hop + i];
        direct += v * v;
      }
      // One-sided spectrum: interior bins stand for a conjugate pair.
      double spec = 0;
      for (std::size_t b = 0; b < s.bins; ++b) {
        const bool paired = b != 0 && !(n % 2 == 0 && b == n / 2);
        spec += (paired ? 2.0 : 1.0) * std::norm(s.at(f, b));
      }
      EXPECT_NEAR(spec / static_cast<double>(n) / direct, 1.0, 1e-4);
    }
  }
}

TEST(Stft, MagnitudeGradient) {
  for (std::size_t w : {16u, 15u}) {
    StftConfig cfg(w, 4);
    auto r = grad_check({random_input({41}, 3)}, [&](const auto& in) { return contract(stft_magnitude(in[0], cfg)); });
    EXPECT_LT(r.max_rel_error, kFdRelTol) << w;
  }
}

TEST(Mel, SilenceIsLogFloor) {
  std::vector<float> x(5000, 0.0f);
  auto m = mel_spectrogram<float>(std::span<const float>(x), MelConfig{});
  EXPECT_EQ(m.dim(1), 192u);
  for (float v : m.values()) EXPECT_FLOAT_EQ(v, static_cast<float>(std::log(kLogFloor)));
}

TEST(Mel, FramesMatchConvStride) {
  // 1.219 s segment: 53759 samples, hop 240 == 16 * 15.
  std::vector<float> x(53759, 0.0f);
  auto m = mel_spectrogram<float>(std::span<const float>(x), MelConfig{});
  EXPECT_EQ(m.dim(0), (53759u + 239u) / 240u);
  EXPECT_EQ(m.dim(0), 224u);
  MelConfig hi;
  hi.hop = 150;
  EXPECT_EQ(mel_frames(53759, hi), (53759u + 149u) / 150u);
}

TEST(Mel, FilterbankNonnegativeAndCovering) {
  for (std::size_t hop : {240u, 150u}) {
    MelConfig cfg;
    cfg.hop = hop;
    auto fb = mel_filterbank(cfg);
    const std::size_t bins = cfg.window / 2 + 1;
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double row = 0;
      for (std::size_t k = 0; k < bins; ++k) {
        EXPECT_GE(fb[m * bins + k], 0.0);
        row += fb[m * bins + k];
      }
      EXPECT_GT(row, 0.0);
    }
    for (std::size_t k = 0; k < bins; ++k) {
      double col = 0;
      for (std::size_t m = 0; m < cfg.n_mels; ++m) col += fb[m * bins + k];
      EXPECT_GT(col, 0.0) << k;
    }
  }
}

TEST(Mel, FlatSpectrumProportionalToBandwidth) {
  MelConfig cfg;
  auto fb = mel_filterbank(cfg);
  auto edges = mel_band_edges(cfg);
  const std::size_t bins = cfg.window / 2 + 1;
  const double df = static_cast<double>(cfg.sample_rate) / cfg.window;
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    double row = 0;
    for (std::size_t k = 0; k < bins; ++k) row += fb[m * bins + k];
    EXPECT_NEAR(row / ((edges[m + 2] - edges[m]) / (2 * df)), 1.0, 1e-9) << m;
  }
}

TEST(MidSide, Examples) {
  std::vector<float> m, s, l, r;
  lr_to_ms(std::vector<float>{1.0f}, std::vector<float>{1.0f}, m, s);
  EXPECT_EQ(m[0], 1.0f);
  EXPECT_EQ(s[0], 0.0f);
  lr_to_ms(std::vector<float>{1.0f}, std::vector<float>{-1.0f}, m, s);
  EXPECT_EQ(m[0], 0.0f);
  EXPECT_EQ(s[0], 1.0f);
  EXPECT_THROW(lr_to_ms(std::vector<float>(3), std::vector<float>(4), m, s), std::invalid_argument);
}

TEST(MidSide, RoundTripWithinOneUlp) {
  auto l0 = noise(200000, 1), r0 = noise(200000, 2);
  std::vector<float> m, s, l, r;
  lr_to_ms(l0, r0, m, s);
  ms_to_lr(m, s, l, r);
  for (std::size_t i = 0; i < l0.size(); ++i) {
    const float big = std::max(std::abs(l0[i]), std::abs(r0[i]));
    const float ulp = std::nextafter(big, 2.0f) - big;
    EXPECT_LE(std::abs(l[i] - l0[i]), ulp);
    EXPECT_LE(std::abs(r[i] - r0[i]), ulp);
  }
}

TEST(MidSide, AppliedTwiceHalvesChannels) {
  auto l0 = noise(1000, 3), r0 = noise(1000, 4);
  std::vector<float> m, s, m2, s2;
  lr_to_ms(l0, r0, m, s);
  lr_to_ms(m, s, m2, s2);
  for (std::size_t i = 0; i < l0.size(); ++i) {
    EXPECT_NEAR(m2[i], l0[i] / 2, 1e-7);
    EXPECT_NEAR(s2[i], r0[i] / 2, 1e-7);
  }
}

TEST(Coprime, Examples) {
  auto w = coprime_windows({2048, 1023, 511});
  ASSERT_EQ(w.size(), 3u);
  EXPECT_EQ(w[1].hop, 255u);
  EXPECT_NO_THROW(coprime_windows({7, 9, 16}));
  EXPECT_THROW(coprime_windows({1024, 512}), ConfigError);
  EXPECT_THROW(coprime_windows({1024, 511, 243, 2048}), ConfigError);
  EXPECT_TRUE(pairwise_coprime({7, 9, 16}));
  EXPECT_FALSE(pairwise_coprime({9, 15, 16}));
}

TEST(LevelAugment, Gains) {
  AudioBuffer x;
  x.channels = {{0.5f, -0.25f, 0.1f}, {0.2f, 0.3f, -0.9f}};
  auto same = level_augment(x, 0.0);
  EXPECT_EQ(same.channels, x.channels);
  auto half = level_augment(x, -6.0206);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(half.channels[c][i] / x.channels[c][i], 0.5, 1e-4);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double g = draw_level_gain_db(rng);
    EXPECT_GE(g, kLevelAugMinDb);
    EXPECT_LE(g, kLevelAugMaxDb);
  }
}
