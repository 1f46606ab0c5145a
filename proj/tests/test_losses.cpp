#include <gtest/gtest.h>

#include <algorithm>
#include <numbers>
#include <numeric>

#include "genae/losses.hpp"
#include "test_util.hpp"

using namespace genae;
using namespace genae::testutil;
using Tf = Tensor<float>;

namespace {
Tf sine(std::size_t n, double freq, double amp = 0.5) {
  std::vector<float> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = static_cast<float>(amp * std::sin(2 * std::numbers::pi * freq * static_cast<double>(i) / kSampleRate));
  return Tf(Shape{n}, std::move(v));
}

Tf noise(std::size_t n, std::uint64_t seed, double scale = 0.3) {
  auto d = random_input({n}, seed, scale);
  return Tf(Shape{n}, std::vector<float>(d.data().begin(), d.data().end()));
}

Tf mix(const Tf& a, const Tf& b, float t) { return add(scale(a, 1 - t), scale(b, t)); }
}  // namespace

TEST(LossWindows, EachFamilyAndUnionCoprime) {
  EXPECT_TRUE(pairwise_coprime(kReconstructionWindows));
  EXPECT_TRUE(pairwise_coprime(kDiscriminatorWindows));
  EXPECT_TRUE(pairwise_coprime(all_loss_windows()));
}

TEST(Mrstft, IdenticalInputsGiveZero) {
  auto x = sine(6000, 440);
  EXPECT_EQ(mrstft_loss(x, x).item(), 0.0);
}

TEST(Mrstft, SpectralConvergenceIsOneForSilentEstimate) {
  // Only the spectral-convergence term is isolated by subtracting the log term.
  auto x = sine(6000, 1000);
  Tf xh(Shape{6000}, 0.0f);
  for (const auto& cfg : coprime_windows(kReconstructionWindows)) {
    const auto mx = stft_magnitude(x, cfg), mh = stft_magnitude(xh, cfg);
    const double log_term =
        l1_mean(log(add_scalar(mx, float(kLogFloor))), log(add_scalar(mh, float(kLogFloor)))).item();
    EXPECT_NEAR(mrstft_loss(x, xh, {cfg}).item() - log_term, 1.0, 1e-5);
  }
}

TEST(Mrstft, DecreasesAlongInterpolationToTarget) {
  auto x = sine(6000, 330), n = noise(6000, 1);
  const double l0 = mrstft_loss(x, mix(n, x, 0.0f)).item();
  const double l5 = mrstft_loss(x, mix(n, x, 0.5f)).item();
  const double l1 = mrstft_loss(x, mix(n, x, 1.0f)).item();
  EXPECT_GT(l0, l5);
  EXPECT_GT(l5, l1);
  EXPECT_EQ(l1, 0.0);
}

TEST(Mrstft, NonnegativeOnRandomPairs) {
  for (std::uint64_t s = 0; s < 5; ++s) EXPECT_GE(mrstft_loss(noise(3000, s), noise(3000, s + 50)).item(), 0.0);
}

TEST(Mrstft, RejectsNonCoprimeWindows) {
  auto x = sine(6000, 440);
  EXPECT_THROW(mrstft_loss(x, x, {StftConfig(1024, 256), StftConfig(512, 128), StftConfig(511, 128)}), ConfigError);
}

TEST(Mrstft, RejectsLengthMismatch) { EXPECT_THROW(mrstft_loss(sine(6000, 1), sine(5000, 1)), std::invalid_argument); }

TEST(Mrstft, GradientMatchesFiniteDifferences) {
  auto x = random_input({64}, 2);
  std::vector<StftConfig> res{StftConfig(16, 4), StftConfig(15, 4), StftConfig(13, 3)};
  // log(eps + |X|) is sharply curved at near-empty bins; the central
  // difference converges as h^2 and needs a finer step here.
  auto r = grad_check({x.detach(), random_input({64}, 3)},
                      [&](const auto& in) { return mrstft_loss(in[0], in[1], res); }, 1e-4);
  EXPECT_LT(r.max_rel_error, kFdRelTol);
}

TEST(MelL1, IdenticalAndConstantOffset) {
  auto m = random_input({5, 7}, 4);
  EXPECT_EQ(mel_l1(m, m).item(), 0.0);
  EXPECT_NEAR(mel_l1(m, add_scalar(m, 0.75)).item(), 0.75, 1e-12);
  EXPECT_NEAR(mel_l1(m, add_scalar(m, -0.25)).item(), 0.25, 1e-12);
}

TEST(MelL1, ShapeMismatchThrows) {
  EXPECT_THROW(mel_l1(random_input({5, 7}, 1), random_input({7, 5}, 1)), std::invalid_argument);
}

TEST(MelL1, GradientMatchesFiniteDifferences) {
  auto r = grad_check({random_input({4, 6}, 5), random_input({4, 6}, 6)},
                      [](const auto& in) { return mel_l1(in[0], in[1]); });
  EXPECT_LT(r.max_rel_error, kFdRelTol);
}

TEST(Discriminator, ParameterBudgetIsSmall) {
  StftDiscriminator<float> d;
  const auto n = param_count(d.parameters());
  EXPECT_GT(n, 50000u);
  EXPECT_LT(n, 200000u);
  EXPECT_EQ(d.resolutions().size(), 3u);
}

TEST(Discriminator, FeatureMatchingZeroForIdenticalInputs) {
  StftDiscriminator<float> d;
  auto x = noise(4000, 7);
  auto l = discriminator_losses(x, x, d);
  EXPECT_EQ(l.fm.item(), 0.0);
  EXPECT_TRUE(std::isfinite(l.adv.item()));
  EXPECT_TRUE(std::isfinite(l.disc_loss.item()));
  EXPECT_GE(l.disc_loss.item(), 0.0);
}

TEST(Discriminator, FeatureMatchingPositiveForDistinctInputs) {
  StftDiscriminator<float> d;
  auto l = discriminator_losses(noise(4000, 8), noise(4000, 9), d, false);
  EXPECT_GT(l.fm.item(), 0.0);
  EXPECT_FALSE(l.disc_loss.defined());
}

TEST(Discriminator, GeneratorAdversarialGradientFiniteAndNonzero) {
  StftDiscriminator<float> d;
  auto xh = noise(4000, 10).detach().set_requires_grad(true);
  discriminator_losses(noise(4000, 11), xh, d, false).adv.backward();
  double g2 = 0;
  for (float g : xh.grad()) {
    ASSERT_TRUE(std::isfinite(g));
    g2 += static_cast<double>(g) * g;
  }
  EXPECT_GT(g2, 0.0);
}

TEST(Discriminator, AdversarialGradientSpotCheck) {
  // Double precision so the central difference is not swamped by rounding.
  StftDiscriminator<double> d;
  auto x = random_input({3000}, 11, 0.3).detach();
  auto xh = random_input({3000}, 12, 0.3);
  discriminator_losses(x, xh, d, false).adv.backward();
  std::vector<std::size_t> idx(xh.numel());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + 5, idx.end(),
                    [&](auto a, auto b) { return std::abs(xh.grad()[a]) > std::abs(xh.grad()[b]); });
  const double h = 1e-5;
  for (int k = 0; k < 5; ++k) {
    const std::size_t j = idx[k];
    const double orig = xh.values()[j];
    double fp, fm;
    {
      NoGradGuard ng;
      xh.values()[j] = orig + h;
      fp = discriminator_losses(x, xh, d, false).adv.item();
      xh.values()[j] = orig - h;
      fm = discriminator_losses(x, xh, d, false).adv.item();
      xh.values()[j] = orig;
    }
    EXPECT_NEAR((fp - fm) / (2 * h), xh.grad()[j], kFdRelTol * std::abs(xh.grad()[j]));
  }
}

TEST(TotalLoss, UnitComponentsGiveTwentyThree) {
  auto one = Tf::scalar(1.0f);
  LossComponents<float> c{one, one, one, one, one, one};
  auto t = total_loss(c, LossWeights{});
  EXPECT_EQ(t.total.item(), 23.0);
  EXPECT_EQ(t.breakdown.size(), 6u);
}

TEST(TotalLoss, ZeroWeightsGiveZero) {
  auto one = Tf::scalar(1.0f);
  LossComponents<float> c{one, one, one, one, one, one};
  EXPECT_EQ(total_loss(c, LossWeights{0, 0, 0, 0, 0, 0}).total.item(), 0.0);
}

TEST(TotalLoss, DroppingMelHeadRemovesTenTimesMelL1) {
  auto v = [](double x) { return Tensor<double>::scalar(x); };
  LossComponents<double> c{v(0.3), v(0.71), v(0.2), v(-0.4), v(1.3), v(12.0)};
  LossWeights w;
  const double with = total_loss(c, w).total.item();
  c.mel_reconstruction = {};
  EXPECT_NEAR(with - total_loss(c, w).total.item(), 10 * 0.71, 1e-12);
}

TEST(TotalLoss, NonFiniteComponentNamed) {
  auto one = Tf::scalar(1.0f);
  LossComponents<float> c{one, one, Tf::scalar(std::nanf("")), one, one, one};
  try {
    total_loss(c, LossWeights{});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("mel_fusion"), std::string::npos);
  }
}

TEST(TotalLoss, NegativeWeightRejected) {
  LossWeights w;
  w.mrstft = -1;
  EXPECT_THROW(w.validate(), ConfigError);
}
