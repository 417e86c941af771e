#pragma once

#include <span>

#include "jqas/autograd.hpp"

namespace jqas::ops {

inline constexpr double kBatchNormEps = 1e-5;

/// Grouped 2-D cross-correlation over NCHW input with a
/// [K_out, C/groups, kh, kw] kernel. groups == C gives a depthwise conv.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, int stride, int padding, int groups);

/// Batch norm that always normalises with the current batch's per-channel
/// statistics (biased variance); there are no running averages.
template <typename T>
Var<T> batchnorm_batchstats(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta,
                            double eps = kBatchNormEps);

// Subgradient is 0 at both kinks.
template <typename T>
Var<T> relu6(const Var<T>& input);

template <typename T>
Var<T> global_avg_pool(const Var<T>& input);

/// input [N,D] x weight [D,K] + bias [K].
template <typename T>
Var<T> dense(const Var<T>& input, const Var<T>& weight, const Var<T>& bias);

/// Mean negative log-softmax of the true class; returns a shape-[1] scalar.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& input, T factor);

/// Multiplies channel c of an NCHW tensor by the constant factors[c].
template <typename T>
Var<T> channel_scale(const Var<T>& input, std::span<const T> factors);

/// Forward value is `value`; the backward pass hands `grad_mask * grad` to
/// `source` (identity when grad_mask is empty). Used for straight-through
/// quantization of masked kernels.
template <typename T>
Var<T> straight_through(const Var<T>& source, Tensor<T> value, Tensor<T> grad_mask);

template <typename T>
Var<T> sum_squares(const Var<T>& input);

/// sum(input * weights) with constant weights; handy for gradient checks.
template <typename T>
Var<T> weighted_sum(const Var<T>& input, const Tensor<T>& weights);

}  // namespace jqas::ops
