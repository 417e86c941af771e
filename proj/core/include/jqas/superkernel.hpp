#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "jqas/autograd.hpp"
#include "jqas/quantizer.hpp"
#include "jqas/random.hpp"

namespace jqas {

inline constexpr std::size_t kMaxKernel = 5;
inline constexpr std::size_t kKernelTaps = kMaxKernel * kMaxKernel;
inline constexpr std::size_t kMaxExpand = 6;

struct ArchThresholds {
  float kernel5 = 0.0f;  // t_{k,5}
  float keep = 0.0f;     // t_{e,3}: keeps the layer (skip when off)
  float expand6 = 0.0f;  // t_{e,6}
};

/// kernel in {3,5}; expand in {0,3,6} where 0 means the layer is skipped.
struct ArchDecision {
  int kernel = 5;
  int expand = 6;

  bool skip() const { return expand == 0; }
  friend bool operator==(const ArchDecision&, const ArchDecision&) = default;
};

/// One searchable layer's realised choice (architecture plus bit width).
struct LayerChoice {
  ArchDecision arch;
  int bits = 16;
  friend bool operator==(const LayerChoice&, const LayerChoice&) = default;
};

/// Sigmoid arguments of the five per-layer decisions. Architecture entries
/// are ||w||^2 - t ("include" orientation), quantizer entries t - ||r||^2
/// ("drop" orientation). keep is +inf when skipping is not allowed.
struct DecisionArgs {
  double kernel5 = 0.0;
  double keep = 0.0;
  double expand6 = 0.0;
  double drop_9_16 = 0.0;
  double drop_5_8 = 0.0;
};

struct DecisionProbabilities {
  double kernel5 = 0.5;
  double keep = 0.5;
  double expand6 = 0.5;
  double drop_9_16 = 0.5;
  double drop_5_8 = 0.5;

  static DecisionProbabilities from_args(const DecisionArgs& args);
};

/// d log p(choice) / d threshold for each of the five thresholds.
struct ThresholdGradient {
  double kernel5 = 0.0;
  double keep = 0.0;
  double expand6 = 0.0;
  double t_9_16 = 0.0;
  double t_5_8 = 0.0;
};

/// Multiplicative masks over the super-kernel's subsets.
struct KernelMasks {
  double outer_taps = 1.0;      // w_{55\33}
  double upper_channels = 1.0;  // w_{.,6\3}
  double keep = 1.0;            // whole kernel (skip gate)
};

/// Per-step subset dropout scales: 0 (dropped) or 1/(1-rate).
struct SubsetDropout {
  double outer_scale = 1.0;
  double upper_scale = 1.0;
};

/// Over-parameterised depthwise kernel [6*C_in, 1, 5, 5]. Channels
/// [0, 3*C_in) form the expand-3 half, the rest the 6\3 half; the centred
/// 3x3 window is w33 and the 16 surrounding taps are w_{55\33}.
template <typename T>
struct SuperKernel {
  Var<T> weights;
  std::size_t in_channels = 0;
  ArchThresholds arch;
  quant::QuantThresholds quant;
  bool skip_allowed = false;

  std::size_t channels() const { return kMaxExpand * in_channels; }
};

template <typename T>
SuperKernel<T> make_superkernel(std::size_t in_channels, bool skip_allowed, Rng& rng);

inline bool is_outer_tap(std::size_t tap) {
  const std::size_t y = tap / kMaxKernel, x = tap % kMaxKernel;
  return y == 0 || x == 0 || y == kMaxKernel - 1 || x == kMaxKernel - 1;
}

/// Group-Lasso indicator, architecture orientation: ||w||^2 - t.
inline double indicator(double subset_norm_sq, double threshold) {
  return subset_norm_sq - threshold;
}

/// ||w_{55\33}||^2 over every channel.
template <typename T>
double outer_norm_sq(const SuperKernel<T>& sk);

/// Squared norms of the lower/upper channel halves of w_k = w33 + outer_factor*w_{55\33}.
template <typename T>
std::pair<double, double> expansion_norms_sq(const SuperKernel<T>& sk, double outer_factor);

Tensor<double> kernel_mask_values(std::size_t in_channels, const KernelMasks& masks);

template <typename T>
Tensor<T> kernel_mask(std::size_t in_channels, const KernelMasks& masks);

/// Entries of `values` whose mask entry is non-zero, in storage order.
template <typename T>
std::vector<T> gather_active(const Tensor<T>& values, const Tensor<T>& mask);

/// Inverse of gather_active; inactive positions are zero.
template <typename T>
Tensor<T> scatter_active(const std::vector<T>& active, const Tensor<T>& mask);

template <typename T>
DecisionArgs decision_args(const SuperKernel<T>& sk);

template <typename T>
DecisionProbabilities decision_probabilities(const SuperKernel<T>& sk);

KernelMasks masks_from(const DecisionProbabilities& p);
KernelMasks masks_from(const ArchDecision& decision);

template <typename T>
struct Composition {
  Tensor<T> kernel;  // weights * mask
  Tensor<T> mask;
  KernelMasks masks;
  std::optional<ArchDecision> decision;  // set in sampled/hard mode
};

template <typename T>
Composition<T> compose(const SuperKernel<T>& sk, ComposeMode mode, Rng* rng = nullptr);

template <typename T>
Composition<T> compose(const SuperKernel<T>& sk, const ArchDecision& decision);

SubsetDropout subset_dropout(double rate, Rng& rng);

/// Draws all five decisions (kernel5, keep, expand6, drop_9_16, drop_5_8 in
/// that order) and maps them to a layer choice.
LayerChoice sample_choice(const DecisionProbabilities& p, bool skip_allowed, Rng& rng);

/// Sigmoids replaced by 1[arg >= 0].
LayerChoice determinize(const DecisionArgs& args, bool skip_allowed);

template <typename T>
LayerChoice determinize(const SuperKernel<T>& sk);

/// d/dt log p(outcome) for p = sigmoid(n - t): on -> -(1 - s), off -> +s.
double include_grad(double arg, bool on);
/// d/dt log p(outcome) for p = sigmoid(t - n): on -> (1 - s), off -> -s.
double drop_grad(double arg, bool on);

/// log p(choice) over the decisions that the choice actually realises.
double log_probability(const DecisionArgs& args, const LayerChoice& choice, bool skip_allowed);

ThresholdGradient log_probability_gradient(const DecisionArgs& args, const LayerChoice& choice,
                                           bool skip_allowed);

/// Sets every threshold to its paired subset norm so that each initial
/// decision probability is 0.5.
template <typename T>
void initialize_thresholds(SuperKernel<T>& sk);

}  // namespace jqas
