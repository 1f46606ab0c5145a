#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "genae/config.hpp"
#include "genae/layers.hpp"
#include "test_util.hpp"

using namespace genae;
using namespace genae::testutil;
using Tf = Tensor<float>;

namespace {
double dot(const Td& a, const Td& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

// Reference formula for the stride/dilation/padding output length.
std::size_t shape_law(std::size_t len, const Conv1dSpec& s) {
  const auto g = s.geometry();
  return (len + g.pad_left + g.pad_right - s.dilation * (s.kernel - 1) - 1) / s.stride + 1;
}

std::vector<Conv1dSpec> model_conv_specs(const ModelConfig& c) {
  std::vector<Conv1dSpec> out{Conv1dSpec::same(1, c.stem_channels, c.kernel)};
  std::size_t ch = c.stem_channels;
  for (std::size_t i = 0; i < c.encoder_strides.size(); ++i) {
    out.push_back(Conv1dSpec::down(ch, c.encoder_channels[i], c.encoder_strides[i], c.separable));
    ch = c.encoder_channels[i];
    for (auto d : c.dilations) out.push_back(Conv1dSpec::same(ch, ch, c.kernel, d, c.separable));
  }
  out.push_back(Conv1dSpec::down(c.enc_attn.dim, c.enc_attn.dim, c.final_downsample, c.separable));
  out.push_back(Conv1dSpec::up(c.dec_attn.dim, c.dec_attn.dim, c.final_downsample));
  ch = c.dec_attn.dim;
  for (std::size_t i = 0; i < c.decoder_upsample.size(); ++i) {
    out.push_back(Conv1dSpec::up(ch, c.decoder_channels[i], c.decoder_upsample[i]));
    ch = c.decoder_channels[i];
    for (auto d : c.dilations) out.push_back(Conv1dSpec::same(ch, ch, c.kernel, d));
  }
  out.push_back(Conv1dSpec::same(ch, 1, c.kernel));
  return out;
}
}  // namespace

// ---------------------------------------------------------------------------
// Convolutions

TEST(Conv1d, IdentityKernelLeavesInputUnchanged) {
  std::vector<double> eye(9, 0.0);
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  auto x = random_input({3, 11}, 1);
  auto y = conv1d(x, Td(Shape{3, 3, 1}, eye), ConvGeometry{});
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv1d, StrideSixteenShapeLaw) {
  Rng rng(1);
  Conv1d<float> c(Conv1dSpec::down(2, 4, 16), rng);
  EXPECT_EQ(c(Tf(Shape{2, 240 * 16}, 0.1f)).dim(1), 240u);
  EXPECT_EQ(c.spec.output_length(240 * 16), 240u);
}

TEST(Conv1d, ShapeLawsOverBothModelConfigs) {
  for (const auto& cfg : {ModelConfig::low_rate(), ModelConfig::high_rate(), ModelConfig::toy()})
    for (const auto& s : model_conv_specs(cfg))
      for (std::size_t len : {s.stride, 7 * s.stride, 240 * s.stride}) {
        if (s.transposed) {
          // (L-1) r + K - cropped (K - r).
          EXPECT_EQ(s.output_length(len), (len - 1) * s.stride + s.kernel - (s.kernel - s.stride));
        } else {
          EXPECT_EQ(s.output_length(len), shape_law(len, s)) << cfg.name;
          EXPECT_EQ(s.output_length(len), len / s.stride) << cfg.name;
        }
      }
}

TEST(Conv1d, ActualOutputMatchesDeclaredLength) {
  Rng rng(2);
  for (std::size_t len : {30u, 31u, 45u, 64u})
    for (auto spec : {Conv1dSpec::down(2, 3, 15), Conv1dSpec::down(2, 3, 2, true), Conv1dSpec::same(2, 3, 7, 9),
                      Conv1dSpec::same(2, 3, 4, 3, true)}) {
      Conv1d<float> c(spec, rng);
      EXPECT_EQ(c(Tf(Shape{2, len}, 0.5f)).dim(1), spec.output_length(len));
    }
}

TEST(Conv1d, DenseMacsPerPosition) {
  EXPECT_EQ(Conv1dSpec::same(32, 64, 7).macs_per_position(), 32u * 64u * 7u);
  EXPECT_EQ(Conv1dSpec::same(32, 64, 7, 1, true).macs_per_position(), 32u * 7u + 32u * 64u);
}

TEST(Conv1d, SeparableToDenseMacRatio) {
  const double r = static_cast<double>(unit_macs_per_position(64, 7, true)) /
                   static_cast<double>(unit_macs_per_position(64, 7, false));
  EXPECT_NEAR(r, 71.0 / 448.0, 1e-15);
  EXPECT_NEAR(r, 0.1585, 5e-5);
}

TEST(Conv1d, SeparableCheaperWheneverOutputsExceedThreshold) {
  for (const auto& cfg : {ModelConfig::low_rate(), ModelConfig::high_rate()})
    for (auto s : model_conv_specs(cfg)) {
      if (s.transposed) continue;
      auto sep = s, dense = s;
      sep.separable = true;
      dense.separable = false;
      const double threshold = static_cast<double>(s.kernel) / static_cast<double>(s.kernel - 1);
      if (s.kernel > 1 && static_cast<double>(s.c_out) > threshold) {
        EXPECT_LT(sep.macs_per_position(), dense.macs_per_position());
      }
    }
}

TEST(Conv1d, SeparableWithIdentityPointwiseIsPerChannelConv) {
  Rng rng(3);
  Conv1d<double> c(Conv1dSpec::same(3, 3, 5, 2, true), rng);
  std::fill(c.pv.values().begin(), c.pv.values().end(), 0.0);
  for (int i = 0; i < 3; ++i) c.pv.values()[i * 3 + i] = 1.0;
  std::fill(c.pg.values().begin(), c.pg.values().end(), 1.0);
  auto x = random_input({3, 20}, 4);
  auto y = c(x);
  const auto w = c.weight();
  const auto g = c.spec.geometry();
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t t = 0; t < 20; ++t) {
      double ref = 0;
      for (std::size_t k = 0; k < 5; ++k) {
        const long idx = static_cast<long>(t + k * 2) - static_cast<long>(g.pad_left);
        if (idx >= 0 && idx < 20) ref += w.data()[ch * 5 + k] * x.data()[ch * 20 + static_cast<std::size_t>(idx)];
      }
      EXPECT_NEAR(y.data()[ch * 20 + t], ref, 1e-12);
    }
}

TEST(Conv1d, SeparableTransposedRejected) {
  Conv1dSpec s = Conv1dSpec::up(2, 2, 4);
  s.separable = true;
  EXPECT_THROW(s.validate(), ConfigError);
  Rng rng(0);
  EXPECT_THROW((ConvTranspose1d<float>(s, rng)), ConfigError);
}

TEST(Conv1d, DenseGradientMatchesFiniteDifferences) {
  Rng rng(5);
  Conv1d<double> c(Conv1dSpec::down(3, 4, 3), rng);
  auto r = grad_check({random_input({3, 12}, 6), c.v, c.g, c.b},
                      [&](const auto& in) { return contract(c(in[0])); });
  EXPECT_LT(r.max_rel_error, kFdRelTol);
}

TEST(Conv1d, SeparableGradientMatchesFiniteDifferences) {
  Rng rng(7);
  Conv1d<double> c(Conv1dSpec::same(3, 4, 5, 3, true), rng);
  auto r = grad_check({random_input({3, 17}, 8), c.v, c.g, c.pv, c.pg, c.b},
                      [&](const auto& in) { return contract(c(in[0])); });
  EXPECT_LT(r.max_rel_error, kFdRelTol);
}

TEST(ConvTranspose1d, FifteenFoldOnFourteenFrames) {
  Rng rng(9);
  ConvTranspose1d<float> c(Conv1dSpec::up(4, 2, 15), rng);
  EXPECT_EQ(c(Tf(Shape{4, 14}, 0.2f)).dim(1), 210u);
}

TEST(ConvTranspose1d, AdjointOfStridedConv) {
  for (std::size_t r : {2u, 5u, 8u, 15u}) {
    const std::size_t ci = 3, co = 4, len = 6 * r, k = 2 * r;
    const auto spec = Conv1dSpec::down(ci, co, r);
    auto x = random_input({ci, len}, r);
    auto w = random_input({co, ci, k}, r + 1);
    auto y = random_input({co, len / r}, r + 2);
    const auto g = spec.geometry();
    const double lhs = dot(conv1d(x, w, g), y);
    // Same memory layout read as [C_in', C_out', K] for the transposed op.
    const double rhs = dot(x, conv_transpose1d(y, w, Td{}, r, g.pad_left, k - r - g.pad_left));
    EXPECT_LT(std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-12), 1e-5) << "r=" << r;
  }
}

TEST(ConvTranspose1d, ConstantInRoundTripIsConstantInInterior) {
  const std::size_t r = 4, k = 8;
  Td w(Shape{1, 1, k}, std::vector<double>(k, 1.0 / k));
  Td x(Shape{1, 64}, 1.0);
  const auto g = Conv1dSpec::down(1, 1, r).geometry();
  auto y = conv_transpose1d(conv1d(x, w, g), w, Td{}, r, g.pad_left, k - r - g.pad_left);
  ASSERT_EQ(y.dim(1), 64u);
  for (std::size_t t = k; t + k < 64; ++t) EXPECT_NEAR(y.data()[t], y.data()[32], 1e-12);
}

TEST(ConvTranspose1d, GradientMatchesFiniteDifferences) {
  Rng rng(10);
  ConvTranspose1d<double> c(Conv1dSpec::up(3, 2, 3), rng);
  auto r = grad_check({random_input({3, 5}, 11), c.v, c.g, c.b}, [&](const auto& in) { return contract(c(in[0])); });
  EXPECT_LT(r.max_rel_error, kFdRelTol);
}

// ---------------------------------------------------------------------------
// Residual units

TEST(DwpwUnit, ZeroPointwiseIsIdentity) {
  Rng rng(11);
  DwpwUnit<double> u(4, 7, 3, Activation::elu, rng);
  std::fill(u.pw.g.values().begin(), u.pw.g.values().end(), 0.0);
  auto x = random_input({4, 30}, 12);
  auto y = u(x);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(DwpwUnit, SkipCarriesGradientThroughSaturatedActivation) {
  Rng rng(13);
  DwpwUnit<double> u(3, 7, 9, Activation::elu, rng);
  std::fill(u.dw.b.values().begin(), u.dw.b.values().end(), -40.0);
  auto x = random_input({3, 25}, 14, 0.1);
  auto r = grad_check({x}, [&](const auto& in) { return contract(u(in[0])); });
  EXPECT_LT(r.max_rel_error, kFdRelTol);
  x.zero_grad();
  const auto w = contract(u(x));
  w.backward();
  // Nearly all gradient comes from the skip path: equals the contraction weights.
  auto ref = Td(Shape{3, 25}, 0.0, true);
  contract(ref).backward();
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(x.grad()[i], ref.grad()[i], 1e-9);
}

TEST(DwpwUnit, GradientMatchesFiniteDifferences) {
  Rng rng(15);
  DwpwUnit<double> u(3, 7, 3, Activation::elu, rng);
  auto r = grad_check({random_input({3, 25}, 16), u.dw.v, u.dw.g, u.pw.v, u.pw.g},
                      [&](const auto& in) { return contract(u(in[0])); });
  EXPECT_LT(r.max_rel_error, kFdRelTol);
}

TEST(TcnUnit, ZeroConvIsIdentity) {
  Rng rng(17);
  TcnUnit<double> u(4, 7, 9, Activation::snakelite, rng);
  std::fill(u.conv.g.values().begin(), u.conv.g.values().end(), 0.0);
  auto x = random_input({4, 30}, 18);
  auto y = u(x);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(TcnUnit, GradientMatchesFiniteDifferences) {
  Rng rng(19);
  TcnUnit<double> u(3, 7, 3, Activation::snakelite, rng);
  auto r = grad_check({random_input({3, 25}, 20), u.conv.v, u.conv.g, u.act.log_beta},
                      [&](const auto& in) { return contract(u(in[0])); });
  EXPECT_LT(r.max_rel_error, kFdRelTol);
}

TEST(ResidualStack, ReceptiveFieldArithmetic) {
  EXPECT_EQ(receptive_field(7, {1, 3, 9}), 1u + 6u * 13u);
  EXPECT_EQ(receptive_field(3, {1}), 3u);
}

TEST(ResidualStack, ImpulseResponseSupportMatchesReceptiveField) {
  Rng rng(21);
  std::vector<DwpwUnit<double>> dw;
  std::vector<TcnUnit<double>> tcn;
  for (std::size_t d : {1u, 3u, 9u}) {
    dw.emplace_back(2, 7, d, Activation::elu, rng);
    tcn.emplace_back(2, 7, d, Activation::snakelite, rng);
  }
  auto support = [](auto& units) {
    auto x = random_input({2, 201}, 22, 0.5);
    Td y = x;
    for (auto& u : units) y = u(y);
    // Gradient of one central output w.r.t. the input.
    std::vector<double> sel(2 * 201, 0.0);
    sel[100] = 1.0;
    sum(mul(y, Td(Shape{2, 201}, sel))).backward();
    std::size_t lo = 201, hi = 0;
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t t = 0; t < 201; ++t)
        if (x.grad()[c * 201 + t] != 0.0) lo = std::min(lo, t), hi = std::max(hi, t);
    return hi - lo + 1;
  };
  EXPECT_EQ(support(dw), receptive_field(7, {1, 3, 9}));
  EXPECT_EQ(support(tcn), receptive_field(7, {1, 3, 9}));
}

// ---------------------------------------------------------------------------
// Attention

namespace {
AttnSpec small_attn(bool rope_on = true) { return AttnSpec{1, 8, 16, 2, 4, 6, 0.0, rope_on}; }
}  // namespace

TEST(Attention, EqualTokensGiveUniformWeights) {
  Td q(Shape{16, 8}, 0.3), k(Shape{16, 8}, 0.3);
  auto p = window_attention_probs(q, k, 2, 16);
  ASSERT_EQ(p.size(), 2u * 16u * 16u);
  for (double v : p) EXPECT_NEAR(v, 1.0 / 16.0, 1e-15);
}

TEST(Attention, BlockGradientMatchesFiniteDifferences) {
  Rng rng(23);
  AttnBlock<double> b(small_attn(), rng, 0.2);
  auto cond = random_input({1, 6}, 24);
  auto r = grad_check({random_input({10, 8}, 25), cond, b.qkv.w, b.q_gain, b.mod.w, b.ff1.w},
                      [&](const auto& in) { return contract(b(in[0], in[1], nullptr)); });
  EXPECT_LT(r.max_rel_error, kFdRelTol);
}

TEST(Attention, NoGradientAcrossWindows) {
  Rng rng(26);
  AttnBlock<double> b(small_attn(), rng, 0.2);
  auto cond = random_input({1, 6}, 27).detach();
  auto x = random_input({11, 8}, 28);
  // Loss on window 0 only (rows 0..3).
  std::vector<double> sel(11 * 8, 0.0);
  for (std::size_t i = 0; i < 4 * 8; ++i) sel[i] = 1.0 + static_cast<double>(i) * 0.01;
  sum(mul(b(x, cond, nullptr), Td(Shape{11, 8}, sel))).backward();
  double inside = 0;
  for (std::size_t i = 0; i < 4 * 8; ++i) inside += std::abs(x.grad()[i]);
  EXPECT_GT(inside, 0.0);
  for (std::size_t i = 4 * 8; i < x.numel(); ++i) EXPECT_EQ(x.grad()[i], 0.0);
  // Perturbing a token in another window leaves window 0 bit-identical.
  NoGradGuard ng;
  const auto y0 = b(x, cond, nullptr);
  auto x2 = x.detach();
  x2.values()[5 * 8 + 3] += 0.5;
  const auto y1 = b(x2, cond, nullptr);
  for (std::size_t i = 0; i < 4 * 8; ++i) EXPECT_EQ(y0.data()[i], y1.data()[i]);
}

TEST(Attention, PartialTailWindow) {
  Rng rng(29);
  AttnBlock<float> b(small_attn(), rng);
  auto y = b(Tf(Shape{7, 8}, 0.1f), Tf(Shape{1, 6}, 0.0f), nullptr);
  EXPECT_EQ(y.shape(), (Shape{7, 8}));
  for (float v : y.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Attention, ZeroInitAdaLnIgnoresCondition) {
  Rng rng(30);
  AttnBlock<double> b(small_attn(), rng, 0.0);
  auto x = random_input({9, 8}, 31).detach();
  auto y_a = b(x, random_input({1, 6}, 32).detach(), nullptr);
  auto y_b = b(x, random_input({1, 6}, 33).detach(), nullptr);
  auto y_0 = b(x, Td(Shape{1, 6}, 0.0), nullptr);
  for (std::size_t i = 0; i < y_a.numel(); ++i) {
    EXPECT_EQ(y_a.data()[i], y_b.data()[i]);
    EXPECT_EQ(y_a.data()[i], y_0.data()[i]);
  }
}

TEST(Attention, PermutationEquivariantWithinWindowWithoutRope) {
  Rng rng(34);
  AttnBlock<double> b(small_attn(false), rng, 0.1);
  auto cond = random_input({1, 6}, 35).detach();
  auto x = random_input({4, 8}, 36).detach();
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<double> xp(32);
  for (std::size_t i = 0; i < 4; ++i)
    std::copy_n(x.data().begin() + perm[i] * 8, 8, xp.begin() + i * 8);
  auto y = b(x, cond, nullptr);
  auto yp = b(Td(Shape{4, 8}, xp), cond, nullptr);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(yp.data()[i * 8 + c], y.data()[perm[i] * 8 + c], 1e-12);
}

TEST(Attention, RopeBreaksPermutationSymmetry) {
  Rng rng(34);
  AttnBlock<double> b(small_attn(true), rng, 0.1);
  auto cond = random_input({1, 6}, 35).detach();
  auto x = random_input({4, 8}, 36).detach();
  std::vector<double> xp(32);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  for (std::size_t i = 0; i < 4; ++i) std::copy_n(x.data().begin() + perm[i] * 8, 8, xp.begin() + i * 8);
  auto y = b(x, cond, nullptr);
  auto yp = b(Td(Shape{4, 8}, xp), cond, nullptr);
  double diff = 0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 8; ++c) diff += std::abs(yp.data()[i * 8 + c] - y.data()[perm[i] * 8 + c]);
  EXPECT_GT(diff, 1e-6);
}

TEST(Attention, SpecValidation) {
  EXPECT_THROW((AttnSpec{1, 10, 16, 3, 16, 6}.validate()), ConfigError);
  EXPECT_THROW((AttnSpec{1, 8, 16, 2, 0, 6}.validate()), ConfigError);
  EXPECT_NO_THROW((AttnSpec{0, 0, 0, 0, 0, 0}.validate()));
}

// ---------------------------------------------------------------------------
// Format conditioning

TEST(FormatEmbedding, FourDistinctRowsAndMonoMapsToMid) {
  Rng rng(37);
  FormatEmbedding<float> e(64, rng);
  EXPECT_EQ(e.table.shape(), (Shape{4, 64}));
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = a + 1; b < 4; ++b) {
      auto ea = e(static_cast<FormatToken>(a)), eb = e(static_cast<FormatToken>(b));
      EXPECT_FALSE(std::equal(ea.data().begin(), ea.data().end(), eb.data().begin()));
    }
  EXPECT_EQ(parse_format_token("mono"), FormatToken::mid);
  for (auto f : {FormatToken::mid, FormatToken::side, FormatToken::left, FormatToken::right})
    EXPECT_EQ(parse_format_token(format_name(f)), f);
  EXPECT_THROW(parse_format_token("surround"), ConfigError);
}

TEST(FormatEmbedding, DistinctTokensGiveDistinctAttentionOutputs) {
  Rng rng(38);
  FormatEmbedding<double> e(6, rng);
  AttnBlock<double> b(small_attn(), rng, 0.1);
  auto x = random_input({6, 8}, 39).detach();
  for (std::size_t a = 0; a < 4; ++a) {
    auto ya = b(x, e(static_cast<FormatToken>(a)), nullptr);
    auto ya2 = b(x, e(static_cast<FormatToken>(a)), nullptr);
    EXPECT_TRUE(std::equal(ya.data().begin(), ya.data().end(), ya2.data().begin()));
    for (std::size_t c = a + 1; c < 4; ++c) {
      auto yc = b(x, e(static_cast<FormatToken>(c)), nullptr);
      EXPECT_FALSE(std::equal(ya.data().begin(), ya.data().end(), yc.data().begin()));
    }
  }
}
