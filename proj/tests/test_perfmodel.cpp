#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "genae/perfmodel.hpp"

using namespace genae;

namespace {
std::vector<float> noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<float> nd(0, 0.3f);
  std::vector<float> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

struct Measured {
  std::uint64_t encoder = 0, decoder = 0;
};

Measured measure(const ModelConfig& cfg, std::size_t samples) {
  GenAE<float> m(cfg);
  NoGradGuard ng;
  const auto x = noise(samples, 1);
  Measured r;
  Tensor<float> z;
  {
    MacCounter mc;
    z = slice(m.encode(x, FormatToken::left).params, 1, 0, cfg.latent_dim);
    r.encoder = mc.count();
  }
  MacCounter mc;
  (void)m.decode(z, FormatToken::left);
  r.decoder = mc.count();
  return r;
}

std::uint64_t sum_prefix(const CostReport& r, const std::string& prefix) {
  std::uint64_t s = 0;
  for (const auto& l : r.layers)
    if (l.name.rfind(prefix, 0) == 0) s += l.macs;
  return s;
}
}  // namespace

TEST(Flops, MatchesCountedForwardForToyModel) {
  const auto cfg = ModelConfig::toy();
  for (std::size_t n : {cfg.total_stride() * 3, cfg.total_stride() * 5 - 17}) {
    const auto rep = flops(cfg, n);
    const auto got = measure(cfg, n);
    EXPECT_EQ(rep.encoder_macs(), got.encoder) << n;
    EXPECT_EQ(rep.decoder_macs(), got.decoder) << n;
    EXPECT_EQ(rep.frames, cfg.frames_for(n));
  }
}

TEST(Flops, MatchesCountedForwardOnEveryLadderStep) {
  for (const auto& step : ablation_ladder()) {
    const std::size_t n = step.config.total_stride() * 2;
    const auto rep = flops(step.config, n);
    const auto got = measure(step.config, n);
    EXPECT_EQ(rep.encoder_macs(), got.encoder) << step.name;
    EXPECT_EQ(rep.decoder_macs(), got.decoder) << step.name;
  }
}

TEST(Flops, SeparableRatioIsExactPerLayer) {
  const auto ladder = ablation_ladder();
  const auto& dense = ladder[2].config;
  const auto& sep = ladder[3].config;
  ASSERT_FALSE(dense.separable);
  ASSERT_TRUE(sep.separable);
  const std::size_t n = dense.total_stride() * 4;
  const auto rd = flops(dense, n), rs = flops(sep, n);
  std::map<std::string, LayerCost> by_name;
  for (const auto& l : rd.layers) by_name[l.name] = l;
  std::size_t checked = 0;
  for (std::size_t i = 0; i < dense.encoder_strides.size(); ++i) {
    const std::string p = "enc.block" + std::to_string(i);
    const std::size_t co = dense.encoder_channels[i];
    // Downsampling conv: (Ci K + Ci Co) / (Ci Co K) with K = 2r.
    const std::size_t k = 2 * dense.encoder_strides[i];
    const auto d = by_name.at(p + ".down").macs;
    const auto s = sum_prefix(rs, p + ".down");
    EXPECT_EQ(s * co * k, d * (k + co)) << p;
    // Residual units: depthwise K plus pointwise C per channel and position.
    for (std::size_t u = 0; u < dense.dilations.size(); ++u) {
      const std::string q = p + ".unit" + std::to_string(u);
      const auto du = sum_prefix(rd, q), su = sum_prefix(rs, q);
      EXPECT_EQ(su * co * dense.kernel, du * (dense.kernel + co)) << q;
      ++checked;
    }
  }
  EXPECT_EQ(checked, dense.encoder_strides.size() * dense.dilations.size());
}

TEST(Flops, MovingAConvPastADownsampleByRDividesItsCostByR) {
  Rng rng(3);
  const Conv1d<float> conv(Conv1dSpec::same(16, 16, 7, 3), rng);
  NoGradGuard ng;
  for (std::size_t r : {2u, 4u, 5u, 15u}) {
    const std::size_t l = 60 * r;
    Tensor<float> a(Shape{16, l}, 0.1f), b(Shape{16, l / r}, 0.1f);
    std::uint64_t ca, cb;
    {
      MacCounter mc;
      (void)conv(a);
      ca = mc.count();
    }
    {
      MacCounter mc;
      (void)conv(b);
      cb = mc.count();
    }
    EXPECT_EQ(ca, cb * r) << r;
  }
}

TEST(Flops, LowRateEncoderCheaperThanDecoder) {
  const auto lo = flops_per_second(ModelConfig::low_rate());
  EXPECT_LT(lo.encoder, lo.decoder);
}

TEST(Flops, HighRateEncoderCostsMorePerSecondThanLowRate) {
  const auto lo = flops_per_second(ModelConfig::low_rate());
  const auto hi = flops_per_second(ModelConfig::high_rate());
  EXPECT_GT(hi.encoder, lo.encoder);
}

TEST(Flops, EncoderSpeedStepsNeverAddMacs) {
  const auto ladder = ablation_ladder();
  std::uint64_t prev = 0;
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    const auto e = flops(ladder[i].config, 44100 * 4).encoder_macs();
    if (i > 0 && ladder[i].speed_step) {
      // Activation choice is not a MAC change; the structural steps must cut MACs.
      if (ladder[i].name == "+Efficient activations")
        EXPECT_EQ(e, prev);
      else
        EXPECT_LT(e, prev) << ladder[i].name;
    }
    prev = e;
  }
}

TEST(Flops, ActivationBytesScaleWithPrecision) {
  const auto r = flops(ModelConfig::toy(), 13440);
  EXPECT_EQ(r.activation_bytes(4, true), 2 * r.activation_bytes(2, true));
  EXPECT_GT(r.activation_bytes(2, false), 0u);
  const auto j = r.to_json();
  EXPECT_EQ(j["total_macs"].get<std::uint64_t>(), r.total_macs());
}

TEST(Ladder, HasSevenCumulativeSteps) {
  const auto l = ablation_ladder();
  ASSERT_EQ(l.size(), 7u);
  EXPECT_EQ(l.front().name, "Base");
  std::size_t speed = 0;
  for (const auto& s : l) {
    s.config.validate();
    speed += s.speed_step;
  }
  EXPECT_EQ(speed, 4u);
  // Every step keeps the latent rate.
  for (const auto& s : l) EXPECT_EQ(s.config.total_stride(), l.front().config.total_stride());
}

TEST(Rtf, QuantilesAndRepetitionFloor) {
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4, 5}, 0.25), 2.0);
  EXPECT_THROW(quantile({}, 0.5), std::invalid_argument);
  int calls = 0;
  EXPECT_THROW(time_rtf([&] { ++calls; }, 1.0, kMinBenchReps - 1), ConfigError);
  EXPECT_EQ(calls, 0);
  auto s = time_rtf([&] { ++calls; }, 1.0, kMinBenchReps, 2);
  EXPECT_EQ(calls, static_cast<int>(kMinBenchReps + 2));
  EXPECT_EQ(s.seconds.size(), kMinBenchReps);
  EXPECT_LE(s.q1_rtf, s.median_rtf);
  EXPECT_LE(s.median_rtf, s.q3_rtf);
}

// Published context lengths (rate Hz, seconds) for the two model classes.
struct ContextRow {
  double rate, seconds;
};
const ContextRow kLmRows[] = {{75, 146},   {150, 73},   {86, 127},      {11, 993},
                              {12.5, 873}, {12.5, 873}, {13.125, 832}, {36.75, 297}};
const ContextRow kDiffusionRows[] = {{21.5, 106}, {11, 206}, {13.125, 173}, {36.75, 62}};

TEST(Context, FittedModelReproducesPublishedRows) {
  const ContextModel cm;
  for (const auto& r : kLmRows)
    EXPECT_NEAR(cm.context_seconds(r.rate, ModelClass::lm) / r.seconds, 1.0, 0.015) << r.rate;
  for (const auto& r : kDiffusionRows)
    EXPECT_NEAR(cm.context_seconds(r.rate, ModelClass::diffusion) / r.seconds, 1.0, 0.015) << r.rate;
}

TEST(Context, InverseInRateAndValidated) {
  const ContextModel cm;
  EXPECT_DOUBLE_EQ(cm.context_seconds(10, ModelClass::lm), 2 * cm.context_seconds(20, ModelClass::lm));
  EXPECT_THROW(cm.context_seconds(0, ModelClass::lm), ConfigError);
  EXPECT_THROW(cm.first_principles_seconds(-1, ModelClass::diffusion), ConfigError);
  EXPECT_THROW(parse_model_class("gan"), ConfigError);
  // 2 (K and V) x 24 layers x 2048 dims x 2 bytes x batch 8.
  EXPECT_DOUBLE_EQ(cm.kv_bytes_per_token(ModelClass::lm), 2.0 * 24 * 2048 * 2 * 8);
  EXPECT_GT(cm.first_principles_seconds(13.125, ModelClass::lm), cm.first_principles_seconds(36.75, ModelClass::lm));
}
