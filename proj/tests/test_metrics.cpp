#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "genae/metrics.hpp"
#include "genae/training.hpp"

using namespace genae;

namespace {
std::vector<float> tone(std::size_t n, double f, double amp = 0.5) {
  std::vector<float> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<float>(amp * std::sin(2 * std::numbers::pi * f * i / 44100.0));
  return v;
}
}  // namespace

TEST(SiSdr, IdenticalSignalsHitCap) {
  auto x = tone(4410, 440);
  EXPECT_DOUBLE_EQ(si_sdr(x, x), kSiSdrCapDb);
}

TEST(SiSdr, ScaleInvariant) {
  auto x = tone(4410, 440);
  std::mt19937_64 rng(1);
  std::normal_distribution<float> nd(0, 0.05f);
  std::vector<float> est(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) est[i] = x[i] + nd(rng);
  const double base = si_sdr(x, est);
  for (float c : {0.25f, 2.0f, 7.5f}) {
    auto e2 = est;
    for (auto& v : e2) v *= c;
    // Scaling in float perturbs the estimate at float precision.
    EXPECT_NEAR(si_sdr(x, e2), base, 1e-6);
  }
  auto doubled = x;
  for (auto& v : doubled) v *= 2;
  EXPECT_DOUBLE_EQ(si_sdr(x, doubled), kSiSdrCapDb);
}

TEST(SiSdr, MatchesAnalyticSnrForOrthogonalNoise) {
  // Noise with the reference component projected out has SI-SDR equal to
  // the plain energy ratio.
  const std::size_t n = 20000;
  auto x = tone(n, 311, 0.4);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd(0, 1);
  std::vector<double> noise(n);
  for (auto& v : noise) v = nd(rng);
  double xn = 0, xx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    xn += x[i] * noise[i];
    xx += static_cast<double>(x[i]) * x[i];
  }
  for (std::size_t i = 0; i < n; ++i) noise[i] -= xn / xx * x[i];
  double nn = 0;
  for (double v : noise) nn += v * v;
  for (double target_db : {-5.0, 0.0, 10.0, 30.0}) {
    const double g = std::sqrt(xx / nn / std::pow(10.0, target_db / 10.0));
    std::vector<float> est(n);
    for (std::size_t i = 0; i < n; ++i) est[i] = static_cast<float>(x[i] + g * noise[i]);
    EXPECT_NEAR(si_sdr(x, est), target_db, 0.1) << target_db;
  }
}

TEST(SiSdr, InvariantToLevelAugmentOfEstimate) {
  auto x = tone(4410, 700);
  auto est = tone(4410, 701);
  AudioBuffer b;
  b.sample_rate = 44100;
  b.channels = {est};
  const double base = si_sdr(x, est);
  for (double db : {-12.0, -6.0, -0.5})
    EXPECT_NEAR(si_sdr(x, level_augment(b, db).channels[0]), base, 1e-6);
}

TEST(SiSdr, Errors) {
  std::vector<float> z(100, 0.0f), x = tone(100, 440);
  EXPECT_THROW(si_sdr(z, x), std::invalid_argument);
  EXPECT_THROW(si_sdr(x, std::vector<float>(99, 0.0f)), std::invalid_argument);
}

TEST(Distances, ZeroOnlyForIdenticalSignals) {
  auto x = tone(8192, 440);
  auto y = tone(8192, 450);
  const MelSpectrogram mel(ModelConfig::toy().mel);
  EXPECT_EQ(mel_distance(x, x, mel), 0.0);
  EXPECT_EQ(mrstft_distance(x, x), 0.0);
  EXPECT_GT(mel_distance(x, y, mel), 0.0);
  EXPECT_GT(mrstft_distance(x, y), 0.0);
}

TEST(Eval, UntrainedModelReportIsFinite) {
  GenAE<float> m(ModelConfig::toy());
  SynthConfig sc;
  sc.length = 6720;
  auto set = synth_dataset(2, 3, sc);
  auto fp = evaluate(m, set, false);
  auto bf = evaluate(m, set, true);
  ASSERT_EQ(fp.tracks.size(), 4u);
  ASSERT_EQ(bf.tracks.size(), 4u);
  double mean = 0;
  for (const auto& t : fp.tracks) mean += t.mel_l1;
  EXPECT_NEAR(fp.aggregate.mel_l1, mean / 4, 1e-12);
  for (const auto& r : {fp, bf}) {
    EXPECT_TRUE(std::isfinite(r.aggregate.si_sdr));
    EXPECT_TRUE(std::isfinite(r.aggregate.mrstft));
    EXPECT_GT(r.lr_mel, 0.0);
    EXPECT_TRUE(std::isfinite(r.ms_mel / r.lr_mel));
  }
  // Rounding every op output changes the numbers.
  EXPECT_NE(fp.aggregate.mel_l1, bf.aggregate.mel_l1);
  auto j = fp.to_json();
  EXPECT_EQ(j["schema_version"], EvalReport::kSchemaVersion);
  EXPECT_EQ(j["track_count"], 4);
  EXPECT_NE(fp.table().find("lr_mel"), std::string::npos);
}

TEST(Eval, FormatConsistencyRequiresStereo) {
  GenAE<float> m(ModelConfig::toy());
  AudioBuffer mono;
  mono.sample_rate = 44100;
  mono.channels = {tone(3360, 440)};
  EXPECT_THROW(format_consistency_eval(m, {mono}), std::invalid_argument);
  EXPECT_THROW(format_consistency_eval(m, {}), std::invalid_argument);
}

TEST(Eval, ReconstructCropsToInputLength) {
  GenAE<float> m(ModelConfig::toy());
  for (std::size_t n : {1u, 3359u, 3361u}) EXPECT_EQ(reconstruct(m, tone(n, 440), FormatToken::mid).size(), n);
}
