#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "jqas/sigmoid.hpp"
#include "jqas/superkernel.hpp"

using namespace jqas;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

SuperKernel<double> kernel(std::size_t cin, bool skip, std::uint64_t seed) {
  Rng rng(seed);
  return make_superkernel<double>(cin, skip, rng);
}

std::size_t zeros_in(const Tensor<double>& t) {
  return static_cast<std::size_t>(std::count(t.data().begin(), t.data().end(), 0.0));
}

}  // namespace

TEST(Indicator, Examples) {
  EXPECT_EQ(indicator(2.0, 1.5), 0.5);
  EXPECT_NEAR(sigmoid(indicator(2.0, 1.5)), 0.6224593312018546, 1e-15);
  EXPECT_EQ(sigmoid(indicator(1.25, 1.25)), 0.5);
  EXPECT_EQ(sigmoid(indicator(1.0, 1e308)), 0.0);
}

TEST(Indicator, OuterTapsAreTheRing) {
  int outer = 0;
  for (std::size_t tap = 0; tap < kKernelTaps; ++tap) outer += is_outer_tap(tap);
  EXPECT_EQ(outer, 16);
  EXPECT_FALSE(is_outer_tap(12));
  EXPECT_TRUE(is_outer_tap(0));
  EXPECT_FALSE(is_outer_tap(6));
}

TEST(Initialization, AllProbabilitiesHalf) {
  for (bool skip : {false, true}) {
    auto sk = kernel(3, skip, 11);
    auto p = decision_probabilities(sk);
    EXPECT_NEAR(p.kernel5, 0.5, 1e-6);
    EXPECT_NEAR(p.expand6, 0.5, 1e-6);
    EXPECT_NEAR(p.drop_9_16, 0.5, 1e-6);
    EXPECT_NEAR(p.drop_5_8, 0.5, 1e-6);
    if (skip) {
      EXPECT_NEAR(p.keep, 0.5, 1e-6);
    } else {
      EXPECT_EQ(p.keep, 1.0);
    }
  }
}

TEST(Compose, HardAllIncludedIsRawWeights) {
  auto sk = kernel(2, true, 1);
  sk.arch = {-1e9f, -1e9f, -1e9f};
  auto c = compose(sk, ComposeMode::Hard);
  EXPECT_EQ(c.kernel, sk.weights.value());
  EXPECT_EQ(*c.decision, (ArchDecision{5, 6}));
}

TEST(Compose, HardSkipZeroesEverything) {
  auto sk = kernel(2, true, 2);
  sk.arch.keep = 1e9f;
  auto c = compose(sk, ComposeMode::Hard);
  EXPECT_TRUE(c.decision->skip());
  EXPECT_EQ(zeros_in(c.kernel), c.kernel.size());
}

TEST(Compose, Hard3x3LowerHalfZeroPattern) {
  const std::size_t cin = 3;
  auto sk = kernel(cin, true, 3);
  sk.arch = {1e9f, -1e9f, 1e9f};  // k5 off, keep on, e6 off
  auto c = compose(sk, ComposeMode::Hard);
  EXPECT_EQ(*c.decision, (ArchDecision{3, 3}));
  const auto& k = c.kernel;
  const std::size_t channels = 6 * cin;
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (std::size_t tap = 0; tap < kKernelTaps; ++tap) {
      const double v = k[ch * kKernelTaps + tap];
      const bool active = ch < 3 * cin && !is_outer_tap(tap);
      if (active) {
        EXPECT_EQ(v, sk.weights.value()[ch * kKernelTaps + tap]);
      } else {
        EXPECT_EQ(v, 0.0);
      }
    }
  // 16 zero taps on each live channel, 3*C_in entirely zero channels.
  EXPECT_EQ(zeros_in(k), 16 * 3 * cin + 3 * cin * kKernelTaps);
}

TEST(Compose, ZeroPatternCountsForEveryDecision) {
  const std::size_t cin = 2;
  auto sk = kernel(cin, false, 4);
  for (int kernel_size : {3, 5})
    for (int e : {3, 6}) {
      auto c = compose(sk, ArchDecision{kernel_size, e});
      const std::size_t live = static_cast<std::size_t>(e) * cin;
      const std::size_t taps = kernel_size == 5 ? 25 : 9;
      EXPECT_EQ(c.kernel.size() - zeros_in(c.kernel), live * taps);
    }
  EXPECT_THROW(compose(sk, ArchDecision{3, 0}), std::invalid_argument);
}

TEST(Compose, SoftAgreesWithHardInSaturation) {
  auto sk = kernel(2, true, 5);
  sk.arch = {-1e6f, -1e6f, 1e6f};
  auto soft = compose(sk, ComposeMode::Soft);
  auto hard = compose(sk, ComposeMode::Hard);
  for (std::size_t i = 0; i < soft.kernel.size(); ++i) EXPECT_EQ(soft.kernel[i], hard.kernel[i]);
}

TEST(Compose, SampledEqualsHardWhenDeterministic) {
  auto sk = kernel(2, true, 6);
  sk.arch = {1e6f, -1e6f, -1e6f};
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    auto s = compose(sk, ComposeMode::Sampled, &rng);
    auto h = compose(sk, ComposeMode::Hard);
    EXPECT_EQ(*s.decision, *h.decision);
    EXPECT_EQ(s.kernel, h.kernel);
  }
}

TEST(Compose, SoftIsContinuousInThresholds) {
  auto sk = kernel(2, true, 7);
  auto a = compose(sk, ComposeMode::Soft).kernel;
  sk.arch.kernel5 += 1e-4f;
  auto b = compose(sk, ComposeMode::Soft).kernel;
  double diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  EXPECT_GT(diff, 0.0);
  EXPECT_LT(diff, 1e-4);
}

TEST(Probabilities, ZeroArgsAreHalf) {
  auto p = DecisionProbabilities::from_args({});
  EXPECT_EQ(p.kernel5, 0.5);
  EXPECT_EQ(p.keep, 0.5);
  EXPECT_EQ(p.expand6, 0.5);
}

TEST(Probabilities, ForcedThresholdsMatchSigmoid) {
  auto sk = kernel(2, true, 8);
  const double outer = outer_norm_sq(sk);
  sk.arch.kernel5 = static_cast<float>(outer - 0.7);
  auto a = decision_args(sk);
  EXPECT_NEAR(a.kernel5, 0.7, 1e-5);
  const auto [lower, upper] = expansion_norms_sq(sk, sigmoid(a.kernel5));
  EXPECT_NEAR(a.keep, lower - sk.arch.keep, 1e-12);
  EXPECT_NEAR(a.expand6, upper - sk.arch.expand6, 1e-12);
  auto p = decision_probabilities(sk);
  EXPECT_NEAR(p.kernel5, sigmoid(a.kernel5), 1e-15);
}

TEST(Probabilities, DeterminizedChoiceIsCertain) {
  auto sk = kernel(2, true, 9);
  const LayerChoice c = determinize(sk);
  const DecisionArgs a = decision_args(sk);
  DecisionArgs hard;
  hard.kernel5 = a.kernel5 >= 0 ? kInf : -kInf;
  hard.keep = a.keep >= 0 ? kInf : -kInf;
  hard.expand6 = a.expand6 >= 0 ? kInf : -kInf;
  hard.drop_9_16 = a.drop_9_16 >= 0 ? kInf : -kInf;
  hard.drop_5_8 = a.drop_5_8 >= 0 ? kInf : -kInf;
  const auto p = DecisionProbabilities::from_args(hard);
  for (double v : {p.kernel5, p.keep, p.expand6, p.drop_9_16, p.drop_5_8}) {
    EXPECT_TRUE(v == 0.0 || v == 1.0);
  }
  EXPECT_EQ(determinize(hard, true), c);
  EXPECT_EQ(std::exp(log_probability(hard, c, true)), 1.0);
}

TEST(Determinize, TieRuleIncludes) {
  DecisionArgs a;
  a.kernel5 = 0.3;
  a.keep = 0.0;
  a.expand6 = 0.0;
  a.drop_9_16 = -0.1;
  auto c = determinize(a, true);
  EXPECT_EQ(c.arch.kernel, 5);
  EXPECT_EQ(c.arch.expand, 6);
  EXPECT_EQ(c.bits, 16);
  a.drop_9_16 = 0.0;
  a.drop_5_8 = 0.0;
  EXPECT_EQ(determinize(a, true).bits, 4);
}

TEST(LogProbability, EnumerationSumsToOne) {
  const DecisionArgs args{0.4, -1.1, 2.0, -0.3, 0.9};
  for (bool skip : {false, true}) {
    DecisionArgs a = args;
    if (!skip) a.keep = kInf;
    double total = 0.0;
    int outcomes = 0;
    std::vector<ArchDecision> archs{{3, 3}, {3, 6}, {5, 3}, {5, 6}};
    if (skip) archs.push_back({3, 0});
    for (auto arch : archs)
      for (int bits : {16, 8, 4}) {
        total += std::exp(log_probability(a, {arch, bits}, skip));
        ++outcomes;
      }
    EXPECT_EQ(outcomes, skip ? 15 : 12);
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(LogProbability, SumOfBernoulliTerms) {
  const DecisionArgs a{0.4, -1.1, 2.0, -0.3, 0.9};
  const LayerChoice c{{5, 3}, 8};
  const double expected = std::log(sigmoid(-1.1)) + std::log(sigmoid(0.4)) +
                          std::log(1 - sigmoid(2.0)) + std::log(sigmoid(-0.3)) +
                          std::log(1 - sigmoid(0.9));
  EXPECT_NEAR(log_probability(a, c, true), expected, 1e-12);
}

TEST(LogProbability, GradientMatchesFiniteDifference) {
  // Thresholds enter with a minus sign (include) or plus sign (drop).
  const DecisionArgs a{0.4, -1.1, 2.0, -0.3, 0.9};
  const double h = 1e-6;
  for (const LayerChoice c : {LayerChoice{{5, 3}, 8}, LayerChoice{{3, 6}, 4},
                              LayerChoice{{3, 0}, 16}}) {
    const auto g = log_probability_gradient(a, c, true);
    auto lp = [&](DecisionArgs x) { return log_probability(x, c, true); };
    auto shifted = [&](double DecisionArgs::*field, double sign) {
      DecisionArgs up = a, down = a;
      up.*field += sign * h;
      down.*field -= sign * h;
      return (lp(up) - lp(down)) / (2 * h);
    };
    EXPECT_NEAR(g.kernel5, shifted(&DecisionArgs::kernel5, -1), 1e-6);
    EXPECT_NEAR(g.keep, shifted(&DecisionArgs::keep, -1), 1e-6);
    EXPECT_NEAR(g.expand6, shifted(&DecisionArgs::expand6, -1), 1e-6);
    EXPECT_NEAR(g.t_9_16, shifted(&DecisionArgs::drop_9_16, 1), 1e-6);
    EXPECT_NEAR(g.t_5_8, shifted(&DecisionArgs::drop_5_8, 1), 1e-6);
  }
}

TEST(LogProbability, SingleDecisionExample) {
  EXPECT_DOUBLE_EQ(include_grad(0.0, true), -0.5);
  EXPECT_DOUBLE_EQ(include_grad(0.0, false), 0.5);
  EXPECT_DOUBLE_EQ(drop_grad(0.0, true), 0.5);
}

TEST(SubsetDropout, RateZeroIsIdentity) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    auto d = subset_dropout(0.0, rng);
    EXPECT_EQ(d.outer_scale, 1.0);
    EXPECT_EQ(d.upper_scale, 1.0);
  }
  EXPECT_THROW(subset_dropout(1.0, rng), std::invalid_argument);
  EXPECT_THROW(subset_dropout(-0.1, rng), std::invalid_argument);
}

TEST(SubsetDropout, EmpiricalFrequency) {
  Rng rng(2);
  int outer = 0, upper = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    auto d = subset_dropout(0.2, rng);
    outer += d.outer_scale == 0.0;
    upper += d.upper_scale == 0.0;
    if (d.outer_scale != 0.0) {
      ASSERT_DOUBLE_EQ(d.outer_scale, 1.25);
    }
  }
  EXPECT_NEAR(double(outer) / n, 0.2, 0.02);
  EXPECT_NEAR(double(upper) / n, 0.2, 0.02);
}

TEST(SampleChoice, FrequenciesFollowProbabilities) {
  DecisionProbabilities p{0.3, 0.8, 0.6, 0.5, 0.25};
  Rng rng(3);
  const int n = 40000;
  int k5 = 0, skip = 0, b4 = 0;
  for (int i = 0; i < n; ++i) {
    auto c = sample_choice(p, true, rng);
    k5 += c.arch.kernel == 5;
    skip += c.arch.skip();
    b4 += c.bits == 4;
  }
  EXPECT_NEAR(double(skip) / n, 0.2, 0.01);
  EXPECT_NEAR(double(k5) / n, 0.3 * 0.8, 0.01);
  EXPECT_NEAR(double(b4) / n, 0.5 * 0.25, 0.01);
}
