#include "jqas/superkernel.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "jqas/sigmoid.hpp"

namespace jqas {

DecisionProbabilities DecisionProbabilities::from_args(const DecisionArgs& a) {
  return {sigmoid(a.kernel5), sigmoid(a.keep), sigmoid(a.expand6), sigmoid(a.drop_9_16),
          sigmoid(a.drop_5_8)};
}

template <typename T>
SuperKernel<T> make_superkernel(std::size_t in_channels, bool skip_allowed, Rng& rng) {
  if (in_channels == 0) throw std::invalid_argument("make_superkernel: zero input channels");
  SuperKernel<T> sk;
  sk.in_channels = in_channels;
  sk.skip_allowed = skip_allowed;
  Tensor<T> w(Shape{sk.channels(), 1, kMaxKernel, kMaxKernel});
  const double stddev = std::sqrt(2.0 / static_cast<double>(kKernelTaps));
  for (auto& v : w.data()) v = static_cast<T>(normal(rng, 0.0, stddev));
  sk.weights = Var<T>(std::move(w), true);
  initialize_thresholds(sk);
  return sk;
}

template <typename T>
double outer_norm_sq(const SuperKernel<T>& sk) {
  const auto w = sk.weights.value().data();
  double acc = 0.0;
  for (std::size_t c = 0; c < sk.channels(); ++c)
    for (std::size_t tap = 0; tap < kKernelTaps; ++tap) {
      if (!is_outer_tap(tap)) continue;
      const double v = w[c * kKernelTaps + tap];
      acc += v * v;
    }
  return acc;
}

template <typename T>
std::pair<double, double> expansion_norms_sq(const SuperKernel<T>& sk, double outer_factor) {
  const auto w = sk.weights.value().data();
  const std::size_t half = sk.channels() / 2;
  double lower = 0.0, upper = 0.0;
  for (std::size_t c = 0; c < sk.channels(); ++c) {
    double acc = 0.0;
    for (std::size_t tap = 0; tap < kKernelTaps; ++tap) {
      const double v = w[c * kKernelTaps + tap] * (is_outer_tap(tap) ? outer_factor : 1.0);
      acc += v * v;
    }
    (c < half ? lower : upper) += acc;
  }
  return {lower, upper};
}

Tensor<double> kernel_mask_values(std::size_t in_channels, const KernelMasks& masks) {
  const std::size_t channels = kMaxExpand * in_channels, half = channels / 2;
  Tensor<double> mask(Shape{channels, 1, kMaxKernel, kMaxKernel});
  for (std::size_t c = 0; c < channels; ++c) {
    const double channel_factor = masks.keep * (c >= half ? masks.upper_channels : 1.0);
    for (std::size_t tap = 0; tap < kKernelTaps; ++tap) {
      mask[c * kKernelTaps + tap] = channel_factor * (is_outer_tap(tap) ? masks.outer_taps : 1.0);
    }
  }
  return mask;
}

template <typename T>
Tensor<T> kernel_mask(std::size_t in_channels, const KernelMasks& masks) {
  return kernel_mask_values(in_channels, masks).template cast<T>();
}

template <typename T>
std::vector<T> gather_active(const Tensor<T>& values, const Tensor<T>& mask) {
  std::vector<T> out;
  out.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    if (mask[i] != T{0}) out.push_back(values[i]);
  return out;
}

template <typename T>
Tensor<T> scatter_active(const std::vector<T>& active, const Tensor<T>& mask) {
  Tensor<T> out(mask.shape());
  std::size_t j = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] != T{0}) out[i] = active.at(j++);
  if (j != active.size()) throw ShapeError("scatter_active: active count mismatch");
  return out;
}

namespace {

template <typename T>
Tensor<T> masked(const Tensor<T>& w, const Tensor<T>& mask) {
  Tensor<T> out(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = w[i] * mask[i];
  return out;
}

}  // namespace

template <typename T>
DecisionArgs decision_args(const SuperKernel<T>& sk) {
  DecisionArgs a;
  a.kernel5 = indicator(outer_norm_sq(sk), sk.arch.kernel5);
  const double p_k5 = sigmoid(a.kernel5);
  const auto [lower, upper] = expansion_norms_sq(sk, p_k5);
  a.keep = sk.skip_allowed ? indicator(lower, sk.arch.keep)
                           : std::numeric_limits<double>::infinity();
  a.expand6 = indicator(upper, sk.arch.expand6);

  // Quantizer statistics are taken on the soft-composed kernel.
  const KernelMasks soft{p_k5, sigmoid(a.expand6), sigmoid(a.keep)};
  const Tensor<T> mask = kernel_mask<T>(sk.in_channels, soft);
  const std::vector<T> active = gather_active(masked(sk.weights.value(), mask), mask);
  double r916 = 0.0, r58 = 0.0;
  if (!active.empty()) {
    const auto d = quant::decompose<T>(active);
    r916 = d.r_9_16_norm_sq();
    r58 = d.r_5_8_norm_sq();
  }
  a.drop_9_16 = quant::drop_indicator(sk.quant.t_9_16, r916);
  a.drop_5_8 = quant::drop_indicator(sk.quant.t_5_8, r58);
  return a;
}

template <typename T>
DecisionProbabilities decision_probabilities(const SuperKernel<T>& sk) {
  return DecisionProbabilities::from_args(decision_args(sk));
}

KernelMasks masks_from(const DecisionProbabilities& p) {
  return {p.kernel5, p.expand6, p.keep};
}

KernelMasks masks_from(const ArchDecision& d) {
  return {d.kernel == 5 ? 1.0 : 0.0, d.expand == 6 ? 1.0 : 0.0, d.skip() ? 0.0 : 1.0};
}

namespace {

ArchDecision arch_from_bits(bool kernel5, bool keep, bool expand6) {
  if (!keep) return {3, 0};
  return {kernel5 ? 5 : 3, expand6 ? 6 : 3};
}

int bits_from(bool drop_9_16, bool drop_5_8) {
  if (!drop_9_16) return 16;
  return drop_5_8 ? 4 : 8;
}

}  // namespace

template <typename T>
Composition<T> compose(const SuperKernel<T>& sk, const ArchDecision& decision) {
  if (decision.skip() && !sk.skip_allowed) {
    throw std::invalid_argument("compose: skip requested on a layer where skip is not allowed");
  }
  Composition<T> out;
  out.masks = masks_from(decision);
  out.mask = kernel_mask<T>(sk.in_channels, out.masks);
  out.kernel = masked(sk.weights.value(), out.mask);
  out.decision = decision;
  return out;
}

template <typename T>
Composition<T> compose(const SuperKernel<T>& sk, ComposeMode mode, Rng* rng) {
  const DecisionArgs args = decision_args(sk);
  switch (mode) {
    case ComposeMode::Soft: {
      Composition<T> out;
      out.masks = masks_from(DecisionProbabilities::from_args(args));
      out.mask = kernel_mask<T>(sk.in_channels, out.masks);
      out.kernel = masked(sk.weights.value(), out.mask);
      return out;
    }
    case ComposeMode::Sampled: {
      if (!rng) throw std::invalid_argument("compose: sampled mode needs an RNG");
      const auto p = DecisionProbabilities::from_args(args);
      const bool k5 = bernoulli(*rng, p.kernel5);
      const bool keep = bernoulli(*rng, p.keep);
      const bool e6 = bernoulli(*rng, p.expand6);
      return compose(sk, arch_from_bits(k5, keep, e6));
    }
    case ComposeMode::Hard:
      return compose(sk, determinize(args, sk.skip_allowed).arch);
  }
  return {};
}

SubsetDropout subset_dropout(double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("subset_dropout: rate must lie in [0,1)");
  }
  const double kept = 1.0 / (1.0 - rate);
  SubsetDropout d;
  d.outer_scale = bernoulli(rng, rate) ? 0.0 : kept;
  d.upper_scale = bernoulli(rng, rate) ? 0.0 : kept;
  return d;
}

LayerChoice sample_choice(const DecisionProbabilities& p, bool skip_allowed, Rng& rng) {
  const bool k5 = bernoulli(rng, p.kernel5);
  const bool keep = bernoulli(rng, p.keep);
  const bool e6 = bernoulli(rng, p.expand6);
  const bool d916 = bernoulli(rng, p.drop_9_16);
  const bool d58 = bernoulli(rng, p.drop_5_8);
  return {arch_from_bits(k5, keep || !skip_allowed, e6), bits_from(d916, d58)};
}

LayerChoice determinize(const DecisionArgs& a, bool skip_allowed) {
  const bool keep = !skip_allowed || a.keep >= 0.0;
  return {arch_from_bits(a.kernel5 >= 0.0, keep, a.expand6 >= 0.0),
          bits_from(a.drop_9_16 >= 0.0, a.drop_5_8 >= 0.0)};
}

template <typename T>
LayerChoice determinize(const SuperKernel<T>& sk) {
  return determinize(decision_args(sk), sk.skip_allowed);
}

double include_grad(double arg, bool on) {
  const double s = sigmoid(arg);
  return on ? -(1.0 - s) : s;
}

double drop_grad(double arg, bool on) {
  const double s = sigmoid(arg);
  return on ? (1.0 - s) : -s;
}

namespace {

double log_outcome(double arg, bool on) { return on ? log_sigmoid(arg) : log_sigmoid(-arg); }

void check_choice(const LayerChoice& c, bool skip_allowed) {
  if (c.arch.skip() && !skip_allowed) {
    throw std::invalid_argument("skip choice on a layer where skip is not allowed");
  }
  if (!quant::is_search_bits(c.bits)) throw std::invalid_argument("choice bits must be 4, 8 or 16");
}

}  // namespace

double log_probability(const DecisionArgs& a, const LayerChoice& c, bool skip_allowed) {
  check_choice(c, skip_allowed);
  double lp = 0.0;
  if (skip_allowed) lp += log_outcome(a.keep, !c.arch.skip());
  if (!c.arch.skip()) {
    lp += log_outcome(a.kernel5, c.arch.kernel == 5);
    lp += log_outcome(a.expand6, c.arch.expand == 6);
  }
  lp += log_outcome(a.drop_9_16, c.bits != 16);
  if (c.bits != 16) lp += log_outcome(a.drop_5_8, c.bits == 4);
  return lp;
}

ThresholdGradient log_probability_gradient(const DecisionArgs& a, const LayerChoice& c,
                                           bool skip_allowed) {
  check_choice(c, skip_allowed);
  ThresholdGradient g;
  if (skip_allowed) g.keep = include_grad(a.keep, !c.arch.skip());
  if (!c.arch.skip()) {
    g.kernel5 = include_grad(a.kernel5, c.arch.kernel == 5);
    g.expand6 = include_grad(a.expand6, c.arch.expand == 6);
  }
  g.t_9_16 = drop_grad(a.drop_9_16, c.bits != 16);
  if (c.bits != 16) g.t_5_8 = drop_grad(a.drop_5_8, c.bits == 4);
  return g;
}

template <typename T>
void initialize_thresholds(SuperKernel<T>& sk) {
  sk.arch.kernel5 = static_cast<float>(outer_norm_sq(sk));
  const double p_k5 = sigmoid(indicator(outer_norm_sq(sk), sk.arch.kernel5));
  const auto [lower, upper] = expansion_norms_sq(sk, p_k5);
  sk.arch.keep = static_cast<float>(lower);
  sk.arch.expand6 = static_cast<float>(upper);
  // Quantizer norms depend on the (now ~0.5) architecture probabilities.
  sk.quant = {};
  const DecisionArgs a = decision_args(sk);
  sk.quant.t_9_16 = static_cast<float>(-a.drop_9_16);
  sk.quant.t_5_8 = static_cast<float>(-a.drop_5_8);
}

#define JQAS_INSTANTIATE_SK(T)                                                              \
  template SuperKernel<T> make_superkernel<T>(std::size_t, bool, Rng&);                    \
  template double outer_norm_sq<T>(const SuperKernel<T>&);                                 \
  template std::pair<double, double> expansion_norms_sq<T>(const SuperKernel<T>&, double); \
  template Tensor<T> kernel_mask<T>(std::size_t, const KernelMasks&);                      \
  template std::vector<T> gather_active<T>(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> scatter_active<T>(const std::vector<T>&, const Tensor<T>&);           \
  template DecisionArgs decision_args<T>(const SuperKernel<T>&);                           \
  template DecisionProbabilities decision_probabilities<T>(const SuperKernel<T>&);         \
  template Composition<T> compose<T>(const SuperKernel<T>&, const ArchDecision&);          \
  template Composition<T> compose<T>(const SuperKernel<T>&, ComposeMode, Rng*);            \
  template LayerChoice determinize<T>(const SuperKernel<T>&);                              \
  template void initialize_thresholds<T>(SuperKernel<T>&);

JQAS_INSTANTIATE_SK(float)
JQAS_INSTANTIATE_SK(double)

#undef JQAS_INSTANTIATE_SK

}  // namespace jqas
