#pragma once

#include <span>
#include <vector>

#include "jqas/random.hpp"

namespace jqas {

enum class ComposeMode { Soft, Sampled, Hard };

namespace quant {

inline constexpr double kDegenerateScale = 1e-12;

/// Linear map of a tensor onto [0,1]: offset = min, scale = max - min.
/// A constant tensor is degenerate: it normalises to 0 and quantizes to itself.
struct NormParams {
  double offset = 0.0;
  double scale = 1.0;
  bool degenerate = false;

  double normalize(double w) const { return degenerate ? 0.0 : (w - offset) / scale; }
  double denormalize(double x) const { return degenerate ? offset : offset + x * scale; }
};

template <typename T>
NormParams norm_fit(std::span<const T> w);

/// floor(x*2^b)/2^b plus one grid step when the fractional part strictly
/// exceeds 0.5. A fraction of exactly 0.5 rounds down.
double q_round(double x, int bits);

template <typename T>
std::vector<T> quantize(std::span<const T> w, int bits, const NormParams& norm);

template <typename T>
std::vector<T> quantize(std::span<const T> w, int bits);

/// 16/8/4-bit views of one tensor sharing a single NormParams. Grid values
/// and residuals are kept in the normalised domain, where they are exact
/// dyadic rationals, so dropping residuals lands exactly on the coarser grid.
struct BitDecomposition {
  NormParams norm;
  std::vector<double> grid16;       // Q(Norm(w), 16)
  std::vector<double> residual_9_16;  // Q(.,16) - Q(.,8)
  std::vector<double> residual_5_8;   // Q(.,8) - Q(.,4)

  std::size_t size() const { return grid16.size(); }

  // Original-scale views.
  template <typename T>
  std::vector<T> w16() const;
  template <typename T>
  std::vector<T> r_9_16() const;
  template <typename T>
  std::vector<T> r_5_8() const;

  /// Squared L2 norms of the residuals in original scale (group-Lasso terms).
  double r_9_16_norm_sq() const;
  double r_5_8_norm_sq() const;
};

template <typename T>
BitDecomposition decompose(std::span<const T> w);

struct QuantThresholds {
  float t_9_16 = 0.0f;
  float t_5_8 = 0.0f;
};

/// Drop decisions for the 9..16 and 5..8 bit residuals. Values are sigmoid
/// probabilities in soft mode and 0/1 otherwise.
struct BitMasks {
  double drop_9_16 = 0.0;
  double drop_5_8 = 0.0;
};

/// Inverted indicator used for "leave out" decisions: t - ||r||^2.
inline double drop_indicator(double threshold, double residual_norm_sq) {
  return threshold - residual_norm_sq;
}

BitMasks bit_masks(const QuantThresholds& t, const BitDecomposition& d, ComposeMode mode,
                   Rng* rng = nullptr);

/// Masks realising a fixed bit width: 16 -> (0,0), 8 -> (1,0), 4 -> (1,1).
BitMasks masks_for_bits(int bits);

/// w_q = w16 - drop_9_16 * (r_9_16 + drop_5_8 * r_5_8), composed in the
/// normalised domain and mapped back once.
template <typename T>
std::vector<T> bit_share(const BitDecomposition& d, const BitMasks& masks);

template <typename T>
std::vector<T> bit_share(const BitDecomposition& d, const QuantThresholds& t, ComposeMode mode,
                         Rng* rng = nullptr);

int effective_bits(const BitMasks& hard);
int effective_bits(const QuantThresholds& t, const BitDecomposition& d);

bool is_search_bits(int bits);

}  // namespace quant
}  // namespace jqas
