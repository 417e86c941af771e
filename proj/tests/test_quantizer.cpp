#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "jqas/quantizer.hpp"
#include "jqas/sigmoid.hpp"
#include "oracles.hpp"

using namespace jqas;
using namespace jqas::quant;

namespace {

std::vector<float> random_vec(std::mt19937_64& gen, std::size_t n, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(d(gen));
  return v;
}

}  // namespace

TEST(NormFit, Endpoints) {
  std::vector<float> w{-1.f, 0.f, 1.f};
  auto n = norm_fit<float>(w);
  EXPECT_EQ(n.offset, -1.0);
  EXPECT_EQ(n.scale, 2.0);
  EXPECT_FALSE(n.degenerate);
}

TEST(NormFit, ConstantIsDegenerateAndQuantizesToItself) {
  std::vector<float> w(7, 0.37f);
  EXPECT_TRUE(norm_fit<float>(w).degenerate);
  EXPECT_EQ(quantize<float>(w, 4), w);
}

TEST(NormFit, RandomMapsOntoUnitInterval) {
  std::mt19937_64 gen(1);
  auto w = random_vec(gen, 200, -3, 5);
  auto n = norm_fit<float>(w);
  double lo = 1e9, hi = -1e9;
  for (float v : w) {
    const double x = n.normalize(v);
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  EXPECT_NEAR(lo, 0.0, 1e-12);
  EXPECT_NEAR(hi, 1.0, 1e-12);
}

TEST(QRound, Examples) {
  for (int b : {1, 2, 4, 8, 16}) {
    EXPECT_EQ(q_round(0.5, b), 0.5);
    EXPECT_EQ(q_round(1.0, b), 1.0);
  }
  EXPECT_EQ(q_round(0.3, 2), 0.25);
  EXPECT_EQ(q_round(0.4, 2), 0.5);
}

TEST(QRound, ExactHalfFractionRoundsDown) {
  // 0.375 * 4 = 1.5: the fraction is exactly one half, so no extra grid step.
  EXPECT_EQ(q_round(0.375, 2), 0.25);
  EXPECT_EQ(q_round(0.125, 2), 0.0);
  EXPECT_EQ(q_round(std::ldexp(3.0, -5), 4), std::ldexp(1.0, -4));
  // Just past the midpoint rounds up.
  EXPECT_EQ(q_round(std::nextafter(0.375, 1.0), 2), 0.5);
}

TEST(QRound, MatchesHalfDownOracle) {
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> d(0, 1);
  for (int i = 0; i < 20000; ++i) {
    const double x = d(gen);
    for (int b : {2, 4, 8, 16}) ASSERT_EQ(q_round(x, b), oracle::round_half_down(x, b));
  }
}

TEST(Quantize, GridValuesAreFixedPoints) {
  // Normalised to {0, 1/16, 5/16, 1}: already on the 4-bit grid.
  std::vector<double> w{0.0, 0.125, 0.625, 2.0};
  EXPECT_EQ(quantize<double>(w, 4), w);
}

TEST(Quantize, OneBitHandExample) {
  std::vector<float> w{-1.f, 0.f, 1.f};
  EXPECT_EQ(quantize<float>(w, 1), w);
}

TEST(Quantize, ErrorBoundedByGridSpacing) {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto w = random_vec(gen, 64, -2, 3);
    const double scale = norm_fit<float>(w).scale;
    for (int b : {4, 8, 16}) {
      auto q = quantize<float>(w, b);
      for (std::size_t i = 0; i < w.size(); ++i) {
        ASSERT_LE(std::abs(double(q[i]) - double(w[i])), scale / std::ldexp(1.0, b) + 1e-6);
      }
    }
  }
}

TEST(Decompose, ResidualBounds) {
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 100; ++trial) {
    auto w = random_vec(gen, 50);
    auto d = decompose<float>(w);
    auto r58 = d.r_5_8<double>(), r916 = d.r_9_16<double>();
    for (std::size_t i = 0; i < w.size(); ++i) {
      ASSERT_LE(std::abs(r58[i]), d.norm.scale / 16.0 + 1e-12);
      ASSERT_LE(std::abs(r916[i]), d.norm.scale / 256.0 + 1e-12);
    }
  }
}

TEST(Decompose, FourBitGridHasZeroResiduals) {
  std::vector<double> w{-1.0, -0.5, 0.25, 1.0, 3.0};  // normalised: k/16 points
  auto d = decompose<double>(w);
  for (double r : d.residual_5_8) EXPECT_EQ(r, 0.0);
  for (double r : d.residual_9_16) EXPECT_EQ(r, 0.0);
}

TEST(BitShare, HardCases) {
  std::mt19937_64 gen(5);
  auto w = random_vec(gen, 40);
  auto d = decompose<float>(w);
  EXPECT_EQ(bit_share<float>(d, masks_for_bits(16)), d.w16<float>());
  EXPECT_EQ(bit_share<float>(d, masks_for_bits(8)), quantize<float>(w, 8));
  EXPECT_EQ(bit_share<float>(d, masks_for_bits(4)), quantize<float>(w, 4));
  EXPECT_EQ(d.w16<float>(), quantize<float>(w, 16));
}

TEST(BitShare, TelescopingOnManyTensors) {
  std::mt19937_64 gen(6);
  std::uniform_int_distribution<std::size_t> len(1, 300);
  for (int trial = 0; trial < 1000; ++trial) {
    auto w = random_vec(gen, len(gen), -4, 4);
    auto d = decompose<float>(w);
    ASSERT_EQ(bit_share<float>(d, BitMasks{1.0, 1.0}), quantize<float>(w, 4)) << trial;
  }
}

TEST(BitShare, SoftInterpolates) {
  std::mt19937_64 gen(7);
  const auto f = random_vec(gen, 20);
  const std::vector<double> w(f.begin(), f.end());
  auto d = decompose<double>(w);
  auto half = bit_share<double>(d, BitMasks{0.5, 0.0});
  auto w16 = d.w16<double>(), w8 = quantize<double>(w, 8);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(half[i], 0.5 * (w16[i] + w8[i]), 1e-12);
}

TEST(BitMasks, SoftProbabilityAndSamplingFrequency) {
  std::mt19937_64 gen(8);
  const auto f = random_vec(gen, 200, -5, 5);
  const std::vector<double> w(f.begin(), f.end());
  auto d = decompose<double>(w);
  QuantThresholds t;
  t.t_9_16 = static_cast<float>(d.r_9_16_norm_sq() + 0.5);
  t.t_5_8 = static_cast<float>(d.r_5_8_norm_sq() - 1.0);
  const BitMasks soft = bit_masks(t, d, ComposeMode::Soft);
  EXPECT_NEAR(soft.drop_9_16, 0.6224593312018546, 1e-6);
  EXPECT_NEAR(soft.drop_5_8, sigmoid(-1.0), 1e-6);

  Rng rng(9);
  const int n = 100000;
  int drops = 0;
  for (int i = 0; i < n; ++i) drops += bit_masks(t, d, ComposeMode::Sampled, &rng).drop_9_16 > 0;
  const double se = std::sqrt(soft.drop_9_16 * (1 - soft.drop_9_16) / n);
  EXPECT_NEAR(double(drops) / n, soft.drop_9_16, 4 * se);
}

TEST(BitMasks, HardTieDrops) {
  std::vector<double> w{0.0, 1.0};
  auto d = decompose<double>(w);
  QuantThresholds t{static_cast<float>(d.r_9_16_norm_sq()), static_cast<float>(d.r_5_8_norm_sq())};
  auto m = bit_masks(t, d, ComposeMode::Hard);
  EXPECT_EQ(m.drop_9_16, 1.0);
  EXPECT_EQ(m.drop_5_8, 1.0);
}

TEST(EffectiveBits, Cases) {
  EXPECT_EQ(effective_bits(BitMasks{0, 0}), 16);
  EXPECT_EQ(effective_bits(BitMasks{0, 1}), 16);
  EXPECT_EQ(effective_bits(BitMasks{1, 0}), 8);
  EXPECT_EQ(effective_bits(BitMasks{1, 1}), 4);
  EXPECT_THROW(masks_for_bits(2), std::invalid_argument);
}
